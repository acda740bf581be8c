//! A feed-forward/recurrent tower over a flat parameter slice:
//! dense pre-layers, LSTM layers, dense post-layers, linear head.
//!
//! Sequences are batched with rows ordered time-major (`row = t * batch + b`).

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::ActivationKind;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

/// Shape of one tower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerSpec {
    pub input: usize,
    pub pre: Vec<usize>,
    pub lstm: Vec<usize>,
    pub post: Vec<usize>,
    pub output: usize,
    /// Dropout rate per fully connected layer, pre then post. Empty means none.
    pub dropout: Vec<f64>,
    pub activation: ActivationKind,
    /// Multiplier applied to the head's initial weights.
    pub head_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LayerKind {
    /// Fully connected; `fc` indexes the dropout table, `None` for the head.
    Dense { fc: Option<usize> },
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    kind: LayerKind,
    input: usize,
    width: usize,
    w: usize,
    u: usize,
    b: usize,
}

impl Layer {
    fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Dense { .. } => self.input * self.width + self.width,
            LayerKind::Lstm => 4 * self.width * (self.input + self.width + 1),
        }
    }
}

/// One row of a per-layer shape listing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub kind: String,
    pub input: usize,
    pub width: usize,
    pub params: usize,
}

impl TowerSpec {
    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        let mut prev = self.input;
        for &w in &self.pre {
            n += prev * w + w;
            prev = w;
        }
        for &h in &self.lstm {
            n += 4 * h * (prev + h + 1);
            prev = h;
        }
        for &w in &self.post {
            n += prev * w + w;
            prev = w;
        }
        n + prev * self.output + self.output
    }

    pub fn validate(&self) -> Result<()> {
        let fc = self.pre.len() + self.post.len();
        if !self.dropout.is_empty() && self.dropout.len() != fc {
            return Err(Error::Config(format!(
                "dropout: {} rates for {fc} fully connected layers",
                self.dropout.len()
            )));
        }
        if self.dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::Config("dropout: rates must lie in [0, 1)".into()));
        }
        if self.input == 0 || self.output == 0 {
            return Err(Error::Config("tower input and output widths must be positive".into()));
        }
        if self.pre.iter().chain(&self.lstm).chain(&self.post).any(|w| *w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn shapes(&self) -> Vec<LayerShape> {
        Tower::new(self.clone(), 0)
            .layers
            .iter()
            .map(|l| LayerShape {
                kind: match l.kind {
                    LayerKind::Dense { fc: Some(_) } => "dense".into(),
                    LayerKind::Dense { fc: None } => "head".into(),
                    LayerKind::Lstm => "lstm".into(),
                },
                input: l.input,
                width: l.width,
                params: l.param_count(),
            })
            .collect()
    }
}

/// Hidden and cell state of every LSTM layer for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub h: Vec<Array2<f64>>,
    pub c: Vec<Array2<f64>>,
}

impl RecurrentState {
    pub fn batch(&self) -> usize {
        self.h.first().map_or(0, |h| h.nrows())
    }

    /// State restricted to the given batch rows.
    pub fn select(&self, rows: &[usize]) -> RecurrentState {
        RecurrentState {
            h: self.h.iter().map(|h| h.select(Axis(0), rows)).collect(),
            c: self.c.iter().map(|c| c.select(Axis(0), rows)).collect(),
        }
    }
}

/// How dropout masks are drawn. Masks depend only on (seed, layer, slot), so a
/// step-by-step pass and a whole-sequence pass see identical masks.
#[derive(Debug, Clone, Copy)]
pub enum DropoutMode<'a> {
    Off,
    /// One seed per batch element; `t0` is the slot index of the first row block.
    Seeded { seeds: &'a [u64], t0: usize },
}

#[derive(Debug, Clone)]
enum LayerCache {
    Dense {
        input: Array2<f64>,
        /// Post-activation output before dropout.
        activated: Array2<f64>,
        mask: Option<Array2<f64>>,
    },
    Lstm {
        input: Array2<f64>,
        h_prev: Array2<f64>,
        c_prev: Array2<f64>,
        /// Gate activations, columns i | f | g | o.
        gates: Array2<f64>,
        tanh_c: Array2<f64>,
    },
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct TowerCache {
    steps: usize,
    batch: usize,
    layers: Vec<LayerCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    pub spec: TowerSpec,
    /// Offset of this tower inside the shared parameter vector.
    pub offset: usize,
    layers: Vec<Layer>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn view2(params: &[f64], off: usize, r: usize, c: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((r, c), &params[off..off + r * c]).expect("parameter view")
}

fn view2_mut(params: &mut [f64], off: usize, r: usize, c: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((r, c), &mut params[off..off + r * c]).expect("parameter view")
}

fn view1(params: &[f64], off: usize, n: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&params[off..off + n])
}

fn view1_mut(params: &mut [f64], off: usize, n: usize) -> ArrayViewMut1<'_, f64> {
    ArrayViewMut1::from(&mut params[off..off + n])
}

impl Tower {
    pub fn new(spec: TowerSpec, offset: usize) -> Self {
        let mut layers = Vec::new();
        let mut cursor = offset;
        let mut prev = spec.input;
        let mut push = |kind, width, prev: &mut usize| {
            let mut l = Layer {
                kind,
                input: *prev,
                width,
                w: cursor,
                u: 0,
                b: 0,
            };
            match kind {
                LayerKind::Dense { .. } => {
                    l.b = l.w + l.input * width;
                }
                LayerKind::Lstm => {
                    l.u = l.w + l.input * 4 * width;
                    l.b = l.u + width * 4 * width;
                }
            }
            cursor += l.param_count();
            *prev = width;
            layers.push(l);
        };
        let mut fc = 0;
        for &w in &spec.pre {
            push(LayerKind::Dense { fc: Some(fc) }, w, &mut prev);
            fc += 1;
        }
        for &h in &spec.lstm {
            push(LayerKind::Lstm, h, &mut prev);
        }
        for &w in &spec.post {
            push(LayerKind::Dense { fc: Some(fc) }, w, &mut prev);
            fc += 1;
        }
        push(LayerKind::Dense { fc: None }, spec.output, &mut prev);
        Self { spec, offset, layers }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.param_count()
    }

    pub fn zero_state(&self, batch: usize) -> RecurrentState {
        let hs: Vec<usize> = self.spec.lstm.clone();
        RecurrentState {
            h: hs.iter().map(|&h| Array2::zeros((batch, h))).collect(),
            c: hs.iter().map(|&h| Array2::zeros((batch, h))).collect(),
        }
    }

    /// Glorot-uniform dense weights, orthogonal recurrent weights, zero biases
    /// except a forget-gate bias of one. The head is scaled by `head_scale`.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        for l in &self.layers {
            match l.kind {
                LayerKind::Dense { fc } => {
                    let limit = (6.0 / (l.input + l.width) as f64).sqrt();
                    let scale = if fc.is_none() { self.spec.head_scale } else { 1.0 };
                    for p in &mut params[l.w..l.b] {
                        *p = scale * limit * (2.0 * rng.random::<f64>() - 1.0);
                    }
                    params[l.b..l.b + l.width].fill(0.0);
                }
                LayerKind::Lstm => {
                    let h = l.width;
                    let limit = (6.0 / (l.input + 4 * h) as f64).sqrt();
                    for p in &mut params[l.w..l.u] {
                        *p = limit * (2.0 * rng.random::<f64>() - 1.0);
                    }
                    for gate in 0..4 {
                        let q = random_orthogonal(h, rng);
                        let mut u = view2_mut(params, l.u, h, 4 * h);
                        u.slice_mut(s![.., gate * h..(gate + 1) * h]).assign(&q);
                    }
                    let b = &mut params[l.b..l.b + 4 * h];
                    b.fill(0.0);
                    b[h..2 * h].fill(1.0);
                }
            }
        }
    }

    fn dropout_mask(&self, fc: usize, rows: usize, batch: usize, width: usize, mode: DropoutMode) -> Option<Array2<f64>> {
        let rate = *self.spec.dropout.get(fc)?;
        let DropoutMode::Seeded { seeds, t0 } = mode else {
            return None;
        };
        if rate <= 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - rate);
        let mut mask = Array2::zeros((rows, width));
        for (r, mut row) in mask.rows_mut().into_iter().enumerate() {
            let (t, b) = (r / batch, r % batch);
            let mut rng = seeded(derive_seed(seeds[b], &[fc as u64, (t0 + t) as u64]));
            for m in row.iter_mut() {
                *m = if rng.random::<f64>() >= rate { keep } else { 0.0 };
            }
        }
        Some(mask)
    }

    /// Runs `steps` slots for `batch` sequences. `x` has `steps * batch` rows.
    /// Returns head outputs (same row order), the cache and the final state.
    pub fn forward(
        &self,
        params: &[f64],
        x: ArrayView2<f64>,
        steps: usize,
        batch: usize,
        state: Option<&RecurrentState>,
        dropout: DropoutMode,
    ) -> Result<(Array2<f64>, TowerCache, RecurrentState)> {
        if x.ncols() != self.spec.input {
            return Err(Error::Shape(format!(
                "observation width {} does not match network input {}",
                x.ncols(),
                self.spec.input
            )));
        }
        if x.nrows() != steps * batch {
            return Err(Error::Shape(format!("{} rows for {steps} steps x {batch} sequences", x.nrows())));
        }
        if let DropoutMode::Seeded { seeds, .. } = dropout {
            if seeds.len() != batch {
                return Err(Error::Shape(format!("{} dropout seeds for batch {batch}", seeds.len())));
            }
        }
        let mut state = match state {
            Some(s) if s.batch() == batch || self.spec.lstm.is_empty() => s.clone(),
            Some(s) => {
                return Err(Error::Shape(format!("recurrent state batch {} vs {batch}", s.batch())));
            }
            None => self.zero_state(batch),
        };
        let rows = steps * batch;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_owned();
        let mut lstm_idx = 0;
        for l in &self.layers {
            match l.kind {
                LayerKind::Dense { fc } => {
                    let w = view2(params, l.w, l.input, l.width);
                    let b = view1(params, l.b, l.width);
                    let mut z = cur.dot(&w);
                    z += &b;
                    if fc.is_some() {
                        match self.spec.activation {
                            ActivationKind::Relu => z.mapv_inplace(|v| v.max(0.0)),
                            ActivationKind::Tanh => z.mapv_inplace(f64::tanh),
                        }
                    }
                    let mask = fc.and_then(|i| self.dropout_mask(i, rows, batch, l.width, dropout));
                    let out = match &mask {
                        Some(m) => &z * m,
                        None => z.clone(),
                    };
                    caches.push(LayerCache::Dense {
                        input: std::mem::replace(&mut cur, out),
                        activated: z,
                        mask,
                    });
                }
                LayerKind::Lstm => {
                    let h = l.width;
                    let w = view2(params, l.w, l.input, 4 * h);
                    let u = view2(params, l.u, h, 4 * h);
                    let bias = view1(params, l.b, 4 * h);
                    let mut xw = cur.dot(&w);
                    xw += &bias;
                    let mut out = Array2::zeros((rows, h));
                    let mut h_prev_all = Array2::zeros((rows, h));
                    let mut c_prev_all = Array2::zeros((rows, h));
                    let mut gates = Array2::zeros((rows, 4 * h));
                    let mut tanh_c = Array2::zeros((rows, h));
                    let mut hs = state.h[lstm_idx].clone();
                    let mut cs = state.c[lstm_idx].clone();
                    for t in 0..steps {
                        let r = t * batch..(t + 1) * batch;
                        h_prev_all.slice_mut(s![r.clone(), ..]).assign(&hs);
                        c_prev_all.slice_mut(s![r.clone(), ..]).assign(&cs);
                        let mut z = xw.slice(s![r.clone(), ..]).to_owned();
                        general_mat_mul(1.0, &hs, &u, 1.0, &mut z);
                        z.slice_mut(s![.., 0..2 * h]).mapv_inplace(sigmoid);
                        z.slice_mut(s![.., 2 * h..3 * h]).mapv_inplace(f64::tanh);
                        z.slice_mut(s![.., 3 * h..]).mapv_inplace(sigmoid);
                        {
                            let ig = z.slice(s![.., 0..h]);
                            let fg = z.slice(s![.., h..2 * h]);
                            let gg = z.slice(s![.., 2 * h..3 * h]);
                            Zip::from(&mut cs)
                                .and(&ig)
                                .and(&fg)
                                .and(&gg)
                                .for_each(|c, &i, &f, &g| *c = f * *c + i * g);
                        }
                        let tc = cs.mapv(f64::tanh);
                        hs = &tc * &z.slice(s![.., 3 * h..]);
                        out.slice_mut(s![r.clone(), ..]).assign(&hs);
                        tanh_c.slice_mut(s![r.clone(), ..]).assign(&tc);
                        gates.slice_mut(s![r, ..]).assign(&z);
                    }
                    state.h[lstm_idx] = hs;
                    state.c[lstm_idx] = cs;
                    lstm_idx += 1;
                    caches.push(LayerCache::Lstm {
                        input: std::mem::replace(&mut cur, out),
                        h_prev: h_prev_all,
                        c_prev: c_prev_all,
                        gates,
                        tanh_c,
                    });
                }
            }
        }
        Ok((
            cur,
            TowerCache {
                steps,
                batch,
                layers: caches,
            },
            state,
        ))
    }

    /// Accumulates dLoss/dparams into `grad` given dLoss/doutput. The sequence
    /// is assumed to start from the zero recurrent state or a constant one.
    pub fn backward(&self, params: &[f64], cache: &TowerCache, d_out: ArrayView2<f64>, grad: &mut [f64]) {
        let (steps, batch) = (cache.steps, cache.batch);
        let mut d = d_out.to_owned();
        for (l, lc) in self.layers.iter().zip(&cache.layers).rev() {
            match (l.kind, lc) {
                (LayerKind::Dense { fc }, LayerCache::Dense { input, activated, mask }) => {
                    if let Some(m) = mask {
                        d *= m;
                    }
                    if fc.is_some() {
                        match self.spec.activation {
                            ActivationKind::Relu => {
                                Zip::from(&mut d).and(activated).for_each(|g, &a| {
                                    if a <= 0.0 {
                                        *g = 0.0
                                    }
                                })
                            }
                            ActivationKind::Tanh => {
                                Zip::from(&mut d).and(activated).for_each(|g, &a| *g *= 1.0 - a * a)
                            }
                        }
                    }
                    {
                        let mut gw = view2_mut(grad, l.w, l.input, l.width);
                        general_mat_mul(1.0, &input.t(), &d, 1.0, &mut gw);
                    }
                    {
                        let mut gb = view1_mut(grad, l.b, l.width);
                        gb += &d.sum_axis(Axis(0));
                    }
                    let w = view2(params, l.w, l.input, l.width);
                    d = d.dot(&w.t());
                }
                (
                    LayerKind::Lstm,
                    LayerCache::Lstm {
                        input,
                        h_prev,
                        c_prev,
                        gates,
                        tanh_c,
                    },
                ) => {
                    let h = l.width;
                    let u = view2(params, l.u, h, 4 * h);
                    let mut dz_all = Array2::<f64>::zeros((steps * batch, 4 * h));
                    let mut dh_next = Array2::<f64>::zeros((batch, h));
                    let mut dc_next = Array2::<f64>::zeros((batch, h));
                    for t in (0..steps).rev() {
                        let r = t * batch..(t + 1) * batch;
                        let g = gates.slice(s![r.clone(), ..]);
                        let tc = tanh_c.slice(s![r.clone(), ..]);
                        let cp = c_prev.slice(s![r.clone(), ..]);
                        let dh = &d.slice(s![r.clone(), ..]) + &dh_next;
                        let mut dz = dz_all.slice_mut(s![r.clone(), ..]);
                        let mut dc = dc_next.clone();
                        for bi in 0..batch {
                            for j in 0..h {
                                let (i, f, gg, o) = (g[[bi, j]], g[[bi, h + j]], g[[bi, 2 * h + j]], g[[bi, 3 * h + j]]);
                                let tcv = tc[[bi, j]];
                                let dhv = dh[[bi, j]];
                                let dcv = dc[[bi, j]] + dhv * o * (1.0 - tcv * tcv);
                                dz[[bi, j]] = dcv * gg * i * (1.0 - i);
                                dz[[bi, h + j]] = dcv * cp[[bi, j]] * f * (1.0 - f);
                                dz[[bi, 2 * h + j]] = dcv * i * (1.0 - gg * gg);
                                dz[[bi, 3 * h + j]] = dhv * tcv * o * (1.0 - o);
                                dc[[bi, j]] = dcv * f;
                            }
                        }
                        dc_next = dc;
                        dh_next = dz.dot(&u.t());
                    }
                    {
                        let mut gw = view2_mut(grad, l.w, l.input, 4 * h);
                        general_mat_mul(1.0, &input.t(), &dz_all, 1.0, &mut gw);
                    }
                    {
                        let mut gu = view2_mut(grad, l.u, h, 4 * h);
                        general_mat_mul(1.0, &h_prev.t(), &dz_all, 1.0, &mut gu);
                    }
                    {
                        let mut gb = view1_mut(grad, l.b, 4 * h);
                        gb += &dz_all.sum_axis(Axis(0));
                    }
                    let w = view2(params, l.w, l.input, 4 * h);
                    d = dz_all.dot(&w.t());
                }
                _ => unreachable!("cache layout follows layer layout"),
            }
        }
    }
}

/// Square orthogonal matrix from Gram-Schmidt on Gaussian columns.
fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array2<f64> {
    let mut q = Array2::<f64>::zeros((n, n));
    let mut j = 0;
    while j < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for k in 0..j {
            let col = q.column(k);
            let dot: f64 = col.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (x, c) in v.iter_mut().zip(col.iter()) {
                *x -= dot * c;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        for (i, x) in v.iter().enumerate() {
            q[[i, j]] = x / norm;
        }
        j += 1;
    }
    q
}
