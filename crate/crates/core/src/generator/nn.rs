//! Pre-norm transformer encoder over frame tokens plus one skeleton token,
//! with a hand-written backward pass.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GeneratorConfig;
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerSlots {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Debug)]
struct Slots {
    embed_w: usize,
    embed_b: usize,
    skel_w: usize,
    skel_b: usize,
    layers: Vec<LayerSlots>,
    lnf_g: usize,
    lnf_b: usize,
    dx_w: usize,
    dx_b: usize,
    c_w: usize,
    c_b: usize,
}

/// Tensor names and shapes in storage order.
fn build_layout(cfg: &GeneratorConfig) -> (Vec<TensorSpec>, Slots) {
    let mut specs = Vec::new();
    let mut add = |name: String, shape: Vec<usize>| {
        specs.push(TensorSpec { name, shape });
        specs.len() - 1
    };
    let (d, f) = (cfg.model_dim, cfg.ffn_dim());
    let embed_w = add("embed.w".into(), vec![cfg.input_dim(), d]);
    let embed_b = add("embed.b".into(), vec![d]);
    let skel_w = add("skeleton.w".into(), vec![cfg.bone_dim(), d]);
    let skel_b = add("skeleton.b".into(), vec![d]);
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let p = |n: &str| format!("layer{l}.{n}");
        layers.push(LayerSlots {
            ln1_g: add(p("ln1.g"), vec![d]),
            ln1_b: add(p("ln1.b"), vec![d]),
            wq: add(p("attn.wq"), vec![d, d]),
            bq: add(p("attn.bq"), vec![d]),
            wk: add(p("attn.wk"), vec![d, d]),
            bk: add(p("attn.bk"), vec![d]),
            wv: add(p("attn.wv"), vec![d, d]),
            bv: add(p("attn.bv"), vec![d]),
            wo: add(p("attn.wo"), vec![d, d]),
            bo: add(p("attn.bo"), vec![d]),
            ln2_g: add(p("ln2.g"), vec![d]),
            ln2_b: add(p("ln2.b"), vec![d]),
            w1: add(p("ffn.w1"), vec![d, f]),
            b1: add(p("ffn.b1"), vec![f]),
            w2: add(p("ffn.w2"), vec![f, d]),
            b2: add(p("ffn.b2"), vec![d]),
        });
    }
    let lnf_g = add("final_ln.g".into(), vec![d]);
    let lnf_b = add("final_ln.b".into(), vec![d]);
    let dx_w = add("head.delta.w".into(), vec![d, cfg.output_dim()]);
    let dx_b = add("head.delta.b".into(), vec![cfg.output_dim()]);
    let c_w = add("head.contact.w".into(), vec![d, 2]);
    let c_b = add("head.contact.b".into(), vec![2]);
    (specs, Slots { embed_w, embed_b, skel_w, skel_b, layers, lnf_g, lnf_b, dx_w, dx_b, c_w, c_b })
}

/// Flat parameter storage with named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub config: GeneratorConfig,
    pub specs: Vec<TensorSpec>,
    offsets: Vec<usize>,
    pub data: Vec<f64>,
}

impl Weights {
    pub fn zeros(config: &GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let (specs, _) = build_layout(config);
        let mut offsets = Vec::with_capacity(specs.len());
        let mut n = 0;
        for s in &specs {
            offsets.push(n);
            n += s.len();
        }
        Ok(Self { config: config.clone(), specs, offsets, data: vec![0.0; n] })
    }

    /// Xavier-uniform matrices, unit layer-norm gains, zero biases, and
    /// zero output heads so an untrained model returns its seed.
    pub fn init(config: &GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut w = Self::zeros(config)?;
        for (i, spec) in w.specs.clone().iter().enumerate() {
            let off = w.offsets[i];
            let block = &mut w.data[off..off + spec.len()];
            if spec.name.ends_with(".g") {
                block.fill(1.0);
            } else if spec.shape.len() == 2 && !spec.name.starts_with("head.") {
                let a = (6.0 / (spec.shape[0] + spec.shape[1]) as f64).sqrt();
                block.iter_mut().for_each(|x| *x = rng.random_range(-a..a));
            }
        }
        Ok(w)
    }

    /// Rebuilds weights from stored tensors, checking names and shapes
    /// against the layout implied by `config`.
    pub fn from_tensors(config: &GeneratorConfig, tensors: Vec<(TensorSpec, Vec<f64>)>) -> Result<Self> {
        let mut w = Self::zeros(config)?;
        if tensors.len() != w.specs.len() {
            return Err(Error::Shape(format!("expected {} tensors, found {}", w.specs.len(), tensors.len())));
        }
        for (i, (spec, values)) in tensors.into_iter().enumerate() {
            let want = &w.specs[i];
            if spec != *want {
                return Err(Error::Shape(format!("tensor {i}: expected {} {:?}, found {} {:?}", want.name, want.shape, spec.name, spec.shape)));
            }
            if values.len() != spec.len() {
                return Err(Error::Shape(format!("tensor {}: {} values for shape {:?}", spec.name, values.len(), spec.shape)));
            }
            let off = w.offsets[i];
            w.data[off..off + values.len()].copy_from_slice(&values);
        }
        Ok(w)
    }

    pub fn tensor(&self, i: usize) -> &[f64] {
        &self.data[self.offsets[i]..self.offsets[i] + self.specs[i].len()]
    }

    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    fn m(&self, i: usize) -> ArrayView2<'_, f64> {
        let s = &self.specs[i].shape;
        ArrayView2::from_shape((s[0], s[1]), self.tensor(i)).expect("layout shape")
    }

    fn v(&self, i: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(self.tensor(i))
    }
}

/// Gradient buffer laid out like [`Weights`].
struct Grads<'a> {
    w: &'a Weights,
    data: Vec<f64>,
}

impl<'a> Grads<'a> {
    fn m(&mut self, i: usize) -> ArrayViewMut2<'_, f64> {
        let s = &self.w.specs[i].shape;
        let off = self.w.offsets[i];
        ArrayViewMut2::from_shape((s[0], s[1]), &mut self.data[off..off + s[0] * s[1]]).expect("layout shape")
    }

    fn v(&mut self, i: usize) -> ArrayViewMut1<'_, f64> {
        let off = self.w.offsets[i];
        let n = self.w.specs[i].len();
        ArrayViewMut1::from(&mut self.data[off..off + n])
    }
}

fn sinusoid(pos: usize, d: usize) -> Array1<f64> {
    Array1::from_shape_fn(d, |k| {
        let freq = 10000f64.powf(-((k / 2 * 2) as f64) / d as f64);
        let a = pos as f64 * freq;
        if k % 2 == 0 {
            a.sin()
        } else {
            a.cos()
        }
    })
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, g: ArrayView1<f64>, b: ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let centred = x - &mean.view().insert_axis(Axis(1));
    let var = centred.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let rstd = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = centred * &rstd.view().insert_axis(Axis(1));
    let y = &xhat * &g + &b;
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward(dy: &Array2<f64>, g: ArrayView1<f64>, c: &LnCache, dg: &mut ArrayViewMut1<f64>, db: &mut ArrayViewMut1<f64>) -> Array2<f64> {
    *dg += &(dy * &c.xhat).sum_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0));
    let dxhat = dy * &g;
    let d = dy.ncols() as f64;
    let m1 = dxhat.sum_axis(Axis(1)) / d;
    let m2 = (&dxhat * &c.xhat).sum_axis(Axis(1)) / d;
    let mut dx = dxhat - &m1.view().insert_axis(Axis(1)) - &(&c.xhat * &m2.view().insert_axis(Axis(1)));
    dx *= &c.rstd.view().insert_axis(Axis(1));
    dx
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044715 * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + 0.044715 * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * u * u)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct LayerCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn: Array2<f64>,
    ln2: LnCache,
    b: Array2<f64>,
    u: Array2<f64>,
    act: Array2<f64>,
}

/// Everything the backward pass needs from one forward pass.
pub struct Tape {
    input: Array2<f64>,
    bones: Array1<f64>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    hf: Array2<f64>,
    contact: Array2<f64>,
}

/// Per-frame network outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct RawOutput {
    /// `frames × 225` pose deviations.
    pub delta: Array2<f64>,
    /// `frames × 2` contact probabilities.
    pub contact: Array2<f64>,
}

/// Runs the encoder on `input` (`frames × input_dim`) and the bone-length
/// vector. The skeleton token is appended after the frame tokens and gets
/// no positional encoding.
pub fn forward(w: &Weights, input: ArrayView2<f64>, bones: &[f64]) -> Result<(RawOutput, Tape)> {
    let cfg = &w.config;
    let (_, slots) = build_layout(cfg);
    if input.ncols() != cfg.input_dim() {
        return Err(Error::Shape(format!("frame tokens have {} features, expected {}", input.ncols(), cfg.input_dim())));
    }
    if bones.len() != cfg.bone_dim() {
        return Err(Error::Shape(format!("bone vector has {} entries, expected {}", bones.len(), cfg.bone_dim())));
    }
    let n = input.nrows();
    let d = cfg.model_dim;
    let bones = Array1::from(bones.to_vec());

    let mut h = Array2::zeros((n + 1, d));
    h.slice_mut(s![..n, ..]).assign(&(input.dot(&w.m(slots.embed_w)) + &w.v(slots.embed_b)));
    for i in 0..n {
        let mut row = h.row_mut(i);
        row += &sinusoid(i, d);
    }
    h.row_mut(n).assign(&(bones.dot(&w.m(slots.skel_w)) + &w.v(slots.skel_b)));

    let heads = cfg.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut layers = Vec::with_capacity(cfg.layers);
    for ls in &slots.layers {
        let (a, ln1) = layer_norm(&h, w.v(ls.ln1_g), w.v(ls.ln1_b));
        let q = a.dot(&w.m(ls.wq)) + &w.v(ls.bq);
        let k = a.dot(&w.m(ls.wk)) + &w.v(ls.bk);
        let v = a.dot(&w.m(ls.wv)) + &w.v(ls.bv);
        let mut attn = Array2::zeros((n + 1, d));
        let mut probs = Vec::with_capacity(heads);
        for hd in 0..heads {
            let cols = s![.., hd * dh..(hd + 1) * dh];
            let mut sc = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            for mut row in sc.rows_mut() {
                let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                row.mapv_inplace(|x| (x - m).exp());
                let z = row.sum();
                row /= z;
            }
            attn.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
            probs.push(sc);
        }
        h = h + attn.dot(&w.m(ls.wo)) + &w.v(ls.bo);
        let (b, ln2) = layer_norm(&h, w.v(ls.ln2_g), w.v(ls.ln2_b));
        let u = b.dot(&w.m(ls.w1)) + &w.v(ls.b1);
        let act = u.mapv(gelu);
        h = h + act.dot(&w.m(ls.w2)) + &w.v(ls.b2);
        layers.push(LayerCache { ln1, a, q, k, v, probs, attn, ln2, b, u, act });
    }
    let (hf_all, lnf) = layer_norm(&h, w.v(slots.lnf_g), w.v(slots.lnf_b));
    let hf = hf_all.slice(s![..n, ..]).to_owned();
    let delta = hf.dot(&w.m(slots.dx_w)) + &w.v(slots.dx_b);
    let contact = (hf.dot(&w.m(slots.c_w)) + &w.v(slots.c_b)).mapv(sigmoid);
    let tape = Tape { input: input.to_owned(), bones, layers, lnf, hf: hf_all, contact: contact.clone() };
    Ok((RawOutput { delta, contact }, tape))
}

/// Parameter gradient given gradients on the outputs of [`forward`].
pub fn backward(w: &Weights, tape: &Tape, d_delta: &Array2<f64>, d_contact: &Array2<f64>) -> Vec<f64> {
    let cfg = &w.config;
    let (_, slots) = build_layout(cfg);
    let mut g = Grads { w, data: vec![0.0; w.data.len()] };
    let n = tape.input.nrows();
    let d = cfg.model_dim;
    let hf = tape.hf.slice(s![..n, ..]);

    let dz = d_contact * &tape.contact.mapv(|c| c * (1.0 - c));
    g.m(slots.dx_w).assign(&hf.t().dot(d_delta));
    g.v(slots.dx_b).assign(&d_delta.sum_axis(Axis(0)));
    g.m(slots.c_w).assign(&hf.t().dot(&dz));
    g.v(slots.c_b).assign(&dz.sum_axis(Axis(0)));
    let mut dhf = Array2::zeros((n + 1, d));
    dhf.slice_mut(s![..n, ..]).assign(&(d_delta.dot(&w.m(slots.dx_w).t()) + dz.dot(&w.m(slots.c_w).t())));

    let (mut dg, mut db) = (Array1::zeros(d), Array1::zeros(d));
    let mut dh = layer_norm_backward(&dhf, w.v(slots.lnf_g), &tape.lnf, &mut dg.view_mut(), &mut db.view_mut());
    g.v(slots.lnf_g).assign(&dg);
    g.v(slots.lnf_b).assign(&db);

    let heads = cfg.heads;
    let dh_sz = d / heads;
    let scale = 1.0 / (dh_sz as f64).sqrt();
    for (ls, c) in slots.layers.iter().zip(&tape.layers).rev() {
        // feed-forward block
        g.m(ls.w2).assign(&c.act.t().dot(&dh));
        g.v(ls.b2).assign(&dh.sum_axis(Axis(0)));
        let dact = dh.dot(&w.m(ls.w2).t());
        let du = dact * &c.u.mapv(gelu_grad);
        g.m(ls.w1).assign(&c.b.t().dot(&du));
        g.v(ls.b1).assign(&du.sum_axis(Axis(0)));
        let dbn = du.dot(&w.m(ls.w1).t());
        let (mut dg, mut db) = (Array1::zeros(d), Array1::zeros(d));
        dh += &layer_norm_backward(&dbn, w.v(ls.ln2_g), &c.ln2, &mut dg.view_mut(), &mut db.view_mut());
        g.v(ls.ln2_g).assign(&dg);
        g.v(ls.ln2_b).assign(&db);

        // attention block
        g.m(ls.wo).assign(&c.attn.t().dot(&dh));
        g.v(ls.bo).assign(&dh.sum_axis(Axis(0)));
        let dattn = dh.dot(&w.m(ls.wo).t());
        let (mut dq, mut dk, mut dv) = (Array2::zeros((n + 1, d)), Array2::zeros((n + 1, d)), Array2::zeros((n + 1, d)));
        for (hd, p) in c.probs.iter().enumerate() {
            let cols = s![.., hd * dh_sz..(hd + 1) * dh_sz];
            let dout = dattn.slice(cols);
            let dp = dout.dot(&c.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&dout));
            let rowdot = (&dp * p).sum_axis(Axis(1));
            let ds = p * &(dp - &rowdot.view().insert_axis(Axis(1))) * scale;
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        g.m(ls.wq).assign(&c.a.t().dot(&dq));
        g.v(ls.bq).assign(&dq.sum_axis(Axis(0)));
        g.m(ls.wk).assign(&c.a.t().dot(&dk));
        g.v(ls.bk).assign(&dk.sum_axis(Axis(0)));
        g.m(ls.wv).assign(&c.a.t().dot(&dv));
        g.v(ls.bv).assign(&dv.sum_axis(Axis(0)));
        let da = dq.dot(&w.m(ls.wq).t()) + dk.dot(&w.m(ls.wk).t()) + dv.dot(&w.m(ls.wv).t());
        let (mut dg, mut db) = (Array1::zeros(d), Array1::zeros(d));
        dh += &layer_norm_backward(&da, w.v(ls.ln1_g), &c.ln1, &mut dg.view_mut(), &mut db.view_mut());
        g.v(ls.ln1_g).assign(&dg);
        g.v(ls.ln1_b).assign(&db);
    }

    let frames = dh.slice(s![..n, ..]);
    g.m(slots.embed_w).assign(&tape.input.t().dot(&frames));
    g.v(slots.embed_b).assign(&frames.sum_axis(Axis(0)));
    let skel_row = dh.row(n);
    g.m(slots.skel_w).assign(&tape.bones.view().insert_axis(Axis(1)).dot(&skel_row.insert_axis(Axis(0))));
    g.v(slots.skel_b).assign(&skel_row);
    g.data
}
