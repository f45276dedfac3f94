use rand::Rng;

use super::{HiddenActivation, MlpConfig, OutputActivation, Topology};
use crate::error::{Error, Result};
use crate::pair::Point;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Act {
    Maxout(usize),
    Leaky(f64),
    Abs,
    Identity,
}

impl Act {
    fn group(self) -> usize {
        match self {
            Act::Maxout(g) => g,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerShape {
    pub fan_in: usize,
    pub pre: usize,
    pub post: usize,
    pub act: Act,
    /// Offset of the `pre x fan_in` row-major weight block.
    pub w: usize,
    /// Offset of the `pre` bias block.
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BranchShape {
    /// Input coordinates read by the first layer.
    pub inputs: Vec<usize>,
    /// Feature coordinates written by the last layer.
    pub outputs: Vec<usize>,
    pub layers: Vec<LayerShape>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub branches: Vec<BranchShape>,
    pub n_classes: usize,
    /// Offset of the `n_classes x 2` head weights.
    pub head_w: usize,
    /// Offset of the `n_classes` head biases.
    pub head_b: usize,
    pub len: usize,
}

impl Layout {
    pub fn new(config: &MlpConfig, n_classes: usize) -> Layout {
        let hidden = match config.hidden_activation {
            HiddenActivation::Maxout => Act::Maxout(config.maxout_group),
            HiddenActivation::LeakyRelu => Act::Leaky(config.leaky_slope),
        };
        let out = match config.output_activation {
            OutputActivation::Abs => Act::Abs,
            OutputActivation::Maxout => Act::Maxout(config.maxout_group),
            OutputActivation::Identity => Act::Identity,
        };
        let specs: Vec<(Vec<usize>, Vec<usize>, usize)> = match config.topology {
            Topology::FullyConnected => vec![(vec![0, 1], vec![0, 1], config.hidden_width)],
            Topology::Structural => {
                let [a, b] = config.branch_widths();
                vec![(vec![0], vec![0], a), (vec![0, 1], vec![1], b)]
            }
        };
        let mut offset = 0;
        let mut branches = Vec::with_capacity(specs.len());
        for (inputs, outputs, width) in specs {
            let mut layers = Vec::with_capacity(config.depth + 1);
            let mut fan_in = inputs.len();
            for k in 0..=config.depth {
                let (post, act) = if k < config.depth {
                    (width, hidden)
                } else {
                    (outputs.len(), out)
                };
                let pre = post * act.group();
                let w = offset;
                let b = w + pre * fan_in;
                offset = b + pre;
                layers.push(LayerShape {
                    fan_in,
                    pre,
                    post,
                    act,
                    w,
                    b,
                });
                fan_in = post;
            }
            branches.push(BranchShape {
                inputs,
                outputs,
                layers,
            });
        }
        let head_w = offset;
        let head_b = head_w + 2 * n_classes;
        let len = head_b + n_classes;
        Layout {
            branches,
            n_classes,
            head_w,
            head_b,
            len,
        }
    }
}

/// Per-sample activations kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    /// `[branch][layer]` input to the layer.
    pub inputs: Vec<Vec<Vec<f64>>>,
    /// `[branch][layer]` pre-activation.
    pub pres: Vec<Vec<Vec<f64>>>,
    /// `[branch][layer]` winning unit per maxout group.
    pub args: Vec<Vec<Vec<usize>>>,
    pub features: Point,
    post: Vec<f64>,
}

impl Trace {
    pub fn new(layout: &Layout) -> Trace {
        let mut inputs = Vec::new();
        let mut pres = Vec::new();
        let mut args = Vec::new();
        for br in &layout.branches {
            inputs.push(br.layers.iter().map(|l| vec![0.0; l.fan_in]).collect());
            pres.push(br.layers.iter().map(|l| vec![0.0; l.pre]).collect());
            args.push(br.layers.iter().map(|l| vec![0usize; l.post]).collect());
        }
        let widest = layout
            .branches
            .iter()
            .flat_map(|b| b.layers.iter())
            .map(|l| l.post)
            .max()
            .unwrap_or(0);
        Trace {
            inputs,
            pres,
            args,
            features: [0.0; 2],
            post: vec![0.0; widest],
        }
    }

    /// Which side of every kink each unit sits on. Two traces with equal
    /// patterns lie in the same smooth region of the network.
    pub fn pattern(&self, layout: &Layout) -> Vec<u32> {
        let mut out = Vec::new();
        for (b, br) in layout.branches.iter().enumerate() {
            for (k, l) in br.layers.iter().enumerate() {
                match l.act {
                    Act::Maxout(_) => out.extend(self.args[b][k].iter().map(|&a| a as u32)),
                    Act::Leaky(_) | Act::Abs => {
                        out.extend(self.pres[b][k].iter().map(|&z| (z > 0.0) as u32 + (z < 0.0) as u32 * 2))
                    }
                    Act::Identity => {}
                }
            }
        }
        out
    }
}

/// Gradient of the loss with respect to every parameter, in the same flat
/// layout as [`MlpModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

/// Feature extractor plus softmax head over `n_classes` pair labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    config: MlpConfig,
    n_classes: usize,
    params: Vec<f64>,
    layout: Layout,
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(config: &MlpConfig, n_classes: usize, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(config, n_classes)?;
        let layout = model.layout.clone();
        for br in &layout.branches {
            for l in &br.layers {
                let s = (6.0 / (l.fan_in + l.pre) as f64).sqrt();
                for w in &mut model.params[l.w..l.w + l.pre * l.fan_in] {
                    *w = rng.random_range(-s..s);
                }
            }
        }
        let s = (6.0 / (2 + n_classes) as f64).sqrt();
        for w in &mut model.params[layout.head_w..layout.head_b] {
            *w = rng.random_range(-s..s);
        }
        Ok(model)
    }

    pub fn zeros(config: &MlpConfig, n_classes: usize) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config, n_classes);
        Ok(MlpModel {
            config: config.clone(),
            n_classes,
            params: vec![0.0; layout.len],
            layout,
        })
    }

    pub fn from_params(config: &MlpConfig, n_classes: usize, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeros(config, n_classes)?;
        if params.len() != model.params.len() {
            return Err(Error::Dimension {
                expected: model.params.len(),
                got: params.len(),
            });
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// `(offset, len)` of the weight and bias blocks of every layer, head
    /// last. Useful for inspecting or perturbing one layer at a time.
    pub fn layer_blocks(&self) -> Vec<((usize, usize), (usize, usize))> {
        let mut v: Vec<_> = self
            .layout
            .branches
            .iter()
            .flat_map(|br| br.layers.iter())
            .map(|l| ((l.w, l.pre * l.fan_in), (l.b, l.pre)))
            .collect();
        v.push((
            (self.layout.head_w, 2 * self.n_classes),
            (self.layout.head_b, self.n_classes),
        ));
        v
    }

    pub(crate) fn forward_traced(&self, x: Point, tr: &mut Trace) {
        let p = &self.params;
        for (b, br) in self.layout.branches.iter().enumerate() {
            for (i, &c) in br.inputs.iter().enumerate() {
                tr.inputs[b][0][i] = x[c];
            }
            let n_layers = br.layers.len();
            for (k, l) in br.layers.iter().enumerate() {
                let (input, pre) = (&tr.inputs[b][k], &mut tr.pres[b][k]);
                for r in 0..l.pre {
                    let row = &p[l.w + r * l.fan_in..l.w + (r + 1) * l.fan_in];
                    let mut z = p[l.b + r];
                    for (w, v) in row.iter().zip(input.iter()) {
                        z += w * v;
                    }
                    pre[r] = z;
                }
                let post = &mut tr.post[..l.post];
                activate(l.act, pre, post, &mut tr.args[b][k]);
                if k + 1 < n_layers {
                    tr.inputs[b][k + 1].copy_from_slice(post);
                } else {
                    for (j, &o) in br.outputs.iter().enumerate() {
                        tr.features[o] = post[j];
                    }
                }
            }
        }
    }

    /// `h(x)` for every row.
    pub fn features(&self, points: &[Point]) -> Vec<Point> {
        let mut tr = Trace::new(&self.layout);
        points
            .iter()
            .map(|&x| {
                self.forward_traced(x, &mut tr);
                tr.features
            })
            .collect()
    }

    /// Row-major `n x ncols` input. Fails unless `ncols == 2`.
    pub fn features_matrix(&self, data: &[f64], ncols: usize) -> Result<Vec<Point>> {
        if ncols != 2 {
            return Err(Error::Dimension {
                expected: 2,
                got: ncols,
            });
        }
        if data.len() % 2 != 0 {
            return Err(Error::InvalidInput("ragged input matrix".into()));
        }
        let pts: Vec<Point> = data.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        Ok(self.features(&pts))
    }

    pub(crate) fn head_logits(&self, h: Point, out: &mut [f64]) {
        let p = &self.params;
        for (c, o) in out.iter_mut().enumerate() {
            let w = &p[self.layout.head_w + 2 * c..self.layout.head_w + 2 * c + 2];
            *o = w[0] * h[0] + w[1] * h[1] + p[self.layout.head_b + c];
        }
    }

    /// Class scores before the softmax.
    pub fn logits(&self, x: Point) -> Vec<f64> {
        let mut tr = Trace::new(&self.layout);
        self.forward_traced(x, &mut tr);
        let mut out = vec![0.0; self.n_classes];
        self.head_logits(tr.features, &mut out);
        out
    }

    /// Most probable class for every row. Ties go to the lowest index.
    pub fn predict(&self, points: &[Point]) -> Vec<usize> {
        let mut tr = Trace::new(&self.layout);
        let mut z = vec![0.0; self.n_classes];
        points
            .iter()
            .map(|&x| {
                self.forward_traced(x, &mut tr);
                self.head_logits(tr.features, &mut z);
                argmax(&z)
            })
            .collect()
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn loss(&self, batch: &[Point], labels: &[usize]) -> f64 {
        let mut tr = Trace::new(&self.layout);
        let mut z = vec![0.0; self.n_classes];
        let total: f64 = batch
            .iter()
            .zip(labels)
            .map(|(&x, &y)| {
                self.forward_traced(x, &mut tr);
                self.head_logits(tr.features, &mut z);
                let (lse, _) = log_softmax_parts(&z);
                lse - z[y]
            })
            .sum();
        total / batch.len() as f64
    }

    /// Mean cross-entropy and its gradient.
    pub fn loss_and_gradient(&self, batch: &[Point], labels: &[usize]) -> (f64, Gradients) {
        let mut grad = vec![0.0; self.params.len()];
        let mut ws = Workspace::new(self);
        let loss = self.accumulate(batch, labels, &mut grad, &mut ws);
        (loss, Gradients(grad))
    }

    /// Adds the mean-loss gradient over the batch into `grad` and returns
    /// the mean loss.
    pub(crate) fn accumulate(
        &self,
        batch: &[Point],
        labels: &[usize],
        grad: &mut [f64],
        ws: &mut Workspace,
    ) -> f64 {
        let n = batch.len() as f64;
        let inv = 1.0 / n;
        let p = &self.params;
        let lay = &self.layout;
        let mut total = 0.0;
        for (&x, &y) in batch.iter().zip(labels) {
            self.forward_traced(x, &mut ws.trace);
            let h = ws.trace.features;
            self.head_logits(h, &mut ws.logits);
            let (lse, max) = log_softmax_parts(&ws.logits);
            total += lse - ws.logits[y];

            // dL/dz = softmax - onehot, scaled for the batch mean
            let denom = (lse - max).exp();
            let mut dh = [0.0; 2];
            for c in 0..lay.n_classes {
                let sm = (ws.logits[c] - max).exp() / denom;
                let dz = (sm - if c == y { 1.0 } else { 0.0 }) * inv;
                let w = lay.head_w + 2 * c;
                grad[w] += dz * h[0];
                grad[w + 1] += dz * h[1];
                grad[lay.head_b + c] += dz;
                dh[0] += p[w] * dz;
                dh[1] += p[w + 1] * dz;
            }

            for (b, br) in lay.branches.iter().enumerate() {
                let last = br.layers.len() - 1;
                ws.d_post.clear();
                ws.d_post.extend(br.outputs.iter().map(|&o| dh[o]));
                for k in (0..=last).rev() {
                    let l = &br.layers[k];
                    let pre = &ws.trace.pres[b][k];
                    ws.d_pre.clear();
                    ws.d_pre.resize(l.pre, 0.0);
                    match l.act {
                        Act::Maxout(g) => {
                            for (u, &a) in ws.trace.args[b][k].iter().enumerate() {
                                ws.d_pre[u * g + a] = ws.d_post[u];
                            }
                        }
                        Act::Leaky(s) => {
                            for r in 0..l.pre {
                                ws.d_pre[r] = if pre[r] > 0.0 { ws.d_post[r] } else { s * ws.d_post[r] };
                            }
                        }
                        Act::Abs => {
                            for r in 0..l.pre {
                                let sg = if pre[r] > 0.0 {
                                    1.0
                                } else if pre[r] < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                };
                                ws.d_pre[r] = sg * ws.d_post[r];
                            }
                        }
                        Act::Identity => ws.d_pre.copy_from_slice(&ws.d_post),
                    }
                    let input = &ws.trace.inputs[b][k];
                    let need_input_grad = k > 0;
                    if need_input_grad {
                        ws.d_in.clear();
                        ws.d_in.resize(l.fan_in, 0.0);
                    }
                    for r in 0..l.pre {
                        let d = ws.d_pre[r];
                        if d == 0.0 {
                            continue;
                        }
                        let row = l.w + r * l.fan_in;
                        for c in 0..l.fan_in {
                            grad[row + c] += d * input[c];
                        }
                        grad[l.b + r] += d;
                        if need_input_grad {
                            for c in 0..l.fan_in {
                                ws.d_in[c] += p[row + c] * d;
                            }
                        }
                    }
                    if need_input_grad {
                        std::mem::swap(&mut ws.d_post, &mut ws.d_in);
                    }
                }
            }
        }
        total * inv
    }
}

/// Scratch buffers reused across samples and steps.
pub(crate) struct Workspace {
    pub trace: Trace,
    logits: Vec<f64>,
    d_post: Vec<f64>,
    d_pre: Vec<f64>,
    d_in: Vec<f64>,
}

impl Workspace {
    pub fn new(model: &MlpModel) -> Workspace {
        Workspace {
            trace: Trace::new(&model.layout),
            logits: vec![0.0; model.n_classes],
            d_post: Vec::new(),
            d_pre: Vec::new(),
            d_in: Vec::new(),
        }
    }
}

fn activate(act: Act, pre: &[f64], post: &mut [f64], args: &mut [usize]) {
    match act {
        Act::Maxout(g) => {
            for (u, out) in post.iter_mut().enumerate() {
                let group = &pre[u * g..(u + 1) * g];
                let mut best = 0;
                for j in 1..g {
                    if group[j] > group[best] {
                        best = j;
                    }
                }
                args[u] = best;
                *out = group[best];
            }
        }
        Act::Leaky(s) => {
            for (o, &z) in post.iter_mut().zip(pre) {
                *o = if z > 0.0 { z } else { s * z };
            }
        }
        Act::Abs => {
            for (o, &z) in post.iter_mut().zip(pre) {
                *o = z.abs();
            }
        }
        Act::Identity => post.copy_from_slice(pre),
    }
}

/// `(log-sum-exp, max)` of the logits.
fn log_softmax_parts(z: &[f64]) -> (f64, f64) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = z.iter().map(|v| (v - max).exp()).sum();
    (max + s.ln(), max)
}

pub(crate) fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}
