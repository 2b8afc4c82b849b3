use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body::{FOOT_VERTEX_COUNT, NUM_KEYPOINTS};
use crate::error::{Error, Result};

/// Layer widths of the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FppConfig {
    pub num_keypoints: usize,
    pub conv_channels: [usize; 2],
    pub kernel: usize,
    pub feature_width: usize,
    pub hidden_width: usize,
    pub decoder_width: usize,
    /// Foot vertices predicted; each gets a contact and a pressure output.
    pub outputs: usize,
}

impl Default for FppConfig {
    fn default() -> Self {
        Self {
            num_keypoints: NUM_KEYPOINTS,
            conv_channels: [16, 16],
            kernel: 3,
            feature_width: 2048,
            hidden_width: 484,
            decoder_width: 256,
            outputs: FOOT_VERTEX_COUNT,
        }
    }
}

/// Named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy)]
enum T {
    Conv1W,
    Conv1B,
    Conv2W,
    Conv2B,
    ProjW,
    ProjB,
    GruWx,
    GruBx,
    GruUh,
    GruBh,
    Dec1W,
    Dec1B,
    Dec2W,
    Dec2B,
}

impl FppConfig {
    /// Per-frame input width: normalized positions then confidences.
    pub fn input_dim(&self) -> usize {
        3 * self.num_keypoints
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.num_keypoints,
            self.conv_channels[0],
            self.conv_channels[1],
            self.feature_width,
            self.hidden_width,
            self.decoder_width,
            self.outputs,
        ];
        if widths.contains(&0) {
            return Err(Error::InvalidInput("network widths must be positive".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::InvalidInput("convolution kernel must be odd".into()));
        }
        Ok(())
    }

    /// Tensor table in storage order.
    pub fn layout(&self) -> Vec<TensorSpec> {
        let (d, [c1, c2], k) = (self.input_dim(), self.conv_channels, self.kernel);
        let (f, h, m, o) = (self.feature_width, self.hidden_width, self.decoder_width, self.outputs);
        let shapes: [(&str, Vec<usize>); 14] = [
            ("conv1.weight", vec![k, c1]),
            ("conv1.bias", vec![c1]),
            ("conv2.weight", vec![k * c1, c2]),
            ("conv2.bias", vec![c2]),
            ("proj.weight", vec![d * c2, f]),
            ("proj.bias", vec![f]),
            ("gru.input_weight", vec![f, 3 * h]),
            ("gru.input_bias", vec![3 * h]),
            ("gru.hidden_weight", vec![h, 3 * h]),
            ("gru.hidden_bias", vec![3 * h]),
            ("decoder1.weight", vec![h, m]),
            ("decoder1.bias", vec![m]),
            ("decoder2.weight", vec![m, 2 * o]),
            ("decoder2.bias", vec![2 * o]),
        ];
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(name, shape)| {
                let spec = TensorSpec {
                    name: name.into(),
                    offset,
                    shape,
                };
                offset += spec.len();
                spec
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().iter().map(TensorSpec::len).sum()
    }
}

/// Keypoint encoder, gated recurrent unit and two-layer decoder with
/// parameters stored in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FppModel {
    pub config: FppConfig,
    layout: Vec<TensorSpec>,
    params: Vec<f64>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|x| x.max(0.0));
}

/// Zeroes gradient entries where the activation was clipped.
fn relu_mask(grad: &mut Array2<f64>, act: &Array2<f64>) {
    grad.zip_mut_with(act, |g, &a| {
        if a <= 0.0 {
            *g = 0.0
        }
    });
}

/// Same-padded sliding windows: rows (sample, position), columns
/// (tap, channel).
fn im2col(x: &Array2<f64>, len: usize, channels: usize, kernel: usize) -> Array2<f64> {
    let n = x.nrows();
    let pad = kernel / 2;
    let mut cols = Array2::zeros((n * len, kernel * channels));
    for i in 0..n {
        for l in 0..len {
            let mut row = cols.row_mut(i * len + l);
            for tap in 0..kernel {
                let Some(src) = (l + tap).checked_sub(pad).filter(|&s| s < len) else {
                    continue;
                };
                for c in 0..channels {
                    row[tap * channels + c] = x[[i, src * channels + c]];
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, n: usize, len: usize, channels: usize, kernel: usize) -> Array2<f64> {
    let pad = kernel / 2;
    let mut x = Array2::zeros((n, len * channels));
    for i in 0..n {
        for l in 0..len {
            let row = cols.row(i * len + l);
            for tap in 0..kernel {
                let Some(src) = (l + tap).checked_sub(pad).filter(|&s| s < len) else {
                    continue;
                };
                for c in 0..channels {
                    x[[i, src * channels + c]] += row[tap * channels + c];
                }
            }
        }
    }
    x
}

/// Intermediate values of one batched pass, kept for backpropagation.
pub(crate) struct Trace {
    batch: usize,
    steps: usize,
    cols1: Array2<f64>,
    act1: Array2<f64>,
    cols2: Array2<f64>,
    act2: Array2<f64>,
    feat: Array2<f64>,
    gates: Vec<GruStep>,
    hidden: Array2<f64>,
    dec: Array2<f64>,
    /// Output pre-activations, rows ordered (sample, step).
    pub(crate) logits: Array2<f64>,
}

struct GruStep {
    h_prev: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    n: Array2<f64>,
    gh_n: Array2<f64>,
}

impl FppModel {
    /// Every parameter zero.
    pub fn zeros(config: FppConfig) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let n = config.parameter_count();
        Ok(Self {
            config,
            layout,
            params: vec![0.0; n],
        })
    }

    /// Glorot-uniform weights and zero biases from a seeded generator.
    pub fn new(config: FppConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for spec in &model.layout {
            if spec.shape.len() != 2 {
                continue;
            }
            let limit = (6.0 / (spec.shape[0] + spec.shape[1]) as f64).sqrt();
            for w in &mut model.params[spec.offset..spec.offset + spec.len()] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(model)
    }

    /// Rebuilds a model from a flat parameter vector.
    pub fn from_params(config: FppConfig, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        if params.len() != model.params.len() {
            return Err(Error::LengthMismatch {
                what: "network parameters",
                expected: model.params.len(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters"));
        }
        model.params = params;
        Ok(model)
    }

    pub fn layout(&self) -> &[TensorSpec] {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn spec(&self, t: T) -> &TensorSpec {
        &self.layout[t as usize]
    }

    fn mat(&self, t: T) -> ArrayView2<'_, f64> {
        let s = self.spec(t);
        ArrayView2::from_shape((s.shape[0], s.shape[1]), &self.params[s.offset..s.offset + s.len()]).expect("layout shape")
    }

    fn vec(&self, t: T) -> ArrayView1<'_, f64> {
        let s = self.spec(t);
        ArrayView1::from(&self.params[s.offset..s.offset + s.len()])
    }

    /// Batched forward pass over `inputs` of shape (batch · steps, input
    /// width), rows ordered (sample, step). The recurrent state starts at
    /// zero for every sample.
    pub(crate) fn forward_trace(&self, inputs: &Array2<f64>, batch: usize, steps: usize) -> Result<Trace> {
        let c = &self.config;
        let d = c.input_dim();
        if inputs.ncols() != d {
            return Err(Error::LengthMismatch {
                what: "network input width",
                expected: d,
                got: inputs.ncols(),
            });
        }
        if inputs.nrows() != batch * steps {
            return Err(Error::LengthMismatch {
                what: "network input rows",
                expected: batch * steps,
                got: inputs.nrows(),
            });
        }
        let rows = batch * steps;
        let [c1, c2] = c.conv_channels;
        let h = c.hidden_width;

        let cols1 = im2col(inputs, d, 1, c.kernel);
        let mut act1 = cols1.dot(&self.mat(T::Conv1W)) + &self.vec(T::Conv1B);
        relu_inplace(&mut act1);
        let act1_flat = act1.view().into_shape_with_order((rows, d * c1)).expect("contiguous").to_owned();
        let cols2 = im2col(&act1_flat, d, c1, c.kernel);
        let mut act2 = cols2.dot(&self.mat(T::Conv2W)) + &self.vec(T::Conv2B);
        relu_inplace(&mut act2);
        let act2_flat = act2.view().into_shape_with_order((rows, d * c2)).expect("contiguous").to_owned();
        let mut feat = act2_flat.dot(&self.mat(T::ProjW)) + &self.vec(T::ProjB);
        relu_inplace(&mut feat);

        let gx = feat.dot(&self.mat(T::GruWx)) + &self.vec(T::GruBx);
        let (uh, bh) = (self.mat(T::GruUh), self.vec(T::GruBh));
        let mut hidden = Array2::zeros((rows, h));
        let mut state = Array2::<f64>::zeros((batch, h));
        let mut gates = Vec::with_capacity(steps);
        for t in 0..steps {
            let gx_t = gx.slice(s![t..;steps, ..]);
            let gh = state.dot(&uh) + &bh;
            let z = (&gx_t.slice(s![.., ..h]) + &gh.slice(s![.., ..h])).mapv(sigmoid);
            let r = (&gx_t.slice(s![.., h..2 * h]) + &gh.slice(s![.., h..2 * h])).mapv(sigmoid);
            let gh_n = gh.slice(s![.., 2 * h..]).to_owned();
            let n = (&gx_t.slice(s![.., 2 * h..]) + &(&r * &gh_n)).mapv(f64::tanh);
            let next = &n + &(&z * &(&state - &n));
            hidden.slice_mut(s![t..;steps, ..]).assign(&next);
            gates.push(GruStep {
                h_prev: std::mem::replace(&mut state, next),
                z,
                r,
                n,
                gh_n,
            });
        }

        let mut dec = hidden.dot(&self.mat(T::Dec1W)) + &self.vec(T::Dec1B);
        relu_inplace(&mut dec);
        let logits = dec.dot(&self.mat(T::Dec2W)) + &self.vec(T::Dec2B);
        Ok(Trace {
            batch,
            steps,
            cols1,
            act1,
            cols2,
            act2: act2_flat,
            feat,
            gates,
            hidden,
            dec,
            logits,
        })
    }

    /// Parameter gradient given the loss gradient with respect to the output
    /// pre-activations of `trace`.
    pub(crate) fn backward(&self, trace: &Trace, dlogits: &Array2<f64>) -> Vec<f64> {
        let c = &self.config;
        let (d, [c1, c2], h) = (c.input_dim(), c.conv_channels, c.hidden_width);
        let (batch, steps) = (trace.batch, trace.steps);
        let rows = batch * steps;
        let mut grad = vec![0.0; self.params.len()];
        let put_mat = |t: T, g: Array2<f64>, grad: &mut [f64]| {
            let s = &self.layout[t as usize];
            let mut dst = ArrayViewMut2::from_shape((s.shape[0], s.shape[1]), &mut grad[s.offset..s.offset + s.len()]).expect("layout shape");
            dst += &g;
        };
        let put_vec = |t: T, g: Array1<f64>, grad: &mut [f64]| {
            let s = &self.layout[t as usize];
            let mut dst = ArrayViewMut1::from(&mut grad[s.offset..s.offset + s.len()]);
            dst += &g;
        };

        put_mat(T::Dec2W, trace.dec.t().dot(dlogits), &mut grad);
        put_vec(T::Dec2B, dlogits.sum_axis(Axis(0)), &mut grad);
        let mut ddec = dlogits.dot(&self.mat(T::Dec2W).t());
        relu_mask(&mut ddec, &trace.dec);
        put_mat(T::Dec1W, trace.hidden.t().dot(&ddec), &mut grad);
        put_vec(T::Dec1B, ddec.sum_axis(Axis(0)), &mut grad);
        let dhidden = ddec.dot(&self.mat(T::Dec1W).t());

        let uh = self.mat(T::GruUh);
        let mut dgx = Array2::zeros((rows, 3 * h));
        let mut duh = Array2::zeros((h, 3 * h));
        let mut dbh = Array1::zeros(3 * h);
        let mut carry = Array2::<f64>::zeros((batch, h));
        for t in (0..steps).rev() {
            let g = &trace.gates[t];
            let dh = &dhidden.slice(s![t..;steps, ..]) + &carry;
            let dn = &dh * &g.z.mapv(|z| 1.0 - z);
            let dz = &dh * &(&g.h_prev - &g.n);
            let mut dprev = &dh * &g.z;
            let da_n = &dn * &g.n.mapv(|n| 1.0 - n * n);
            let dr = &da_n * &g.gh_n;
            let da_z = &dz * &g.z.mapv(|z| z * (1.0 - z));
            let da_r = &dr * &g.r.mapv(|r| r * (1.0 - r));
            let mut dgh = Array2::zeros((batch, 3 * h));
            dgh.slice_mut(s![.., ..h]).assign(&da_z);
            dgh.slice_mut(s![.., h..2 * h]).assign(&da_r);
            dgh.slice_mut(s![.., 2 * h..]).assign(&(&da_n * &g.r));
            let mut gx_rows = dgx.slice_mut(s![t..;steps, ..]);
            gx_rows.slice_mut(s![.., ..h]).assign(&da_z);
            gx_rows.slice_mut(s![.., h..2 * h]).assign(&da_r);
            gx_rows.slice_mut(s![.., 2 * h..]).assign(&da_n);
            duh += &g.h_prev.t().dot(&dgh);
            dbh += &dgh.sum_axis(Axis(0));
            dprev += &dgh.dot(&uh.t());
            carry = dprev;
        }
        put_mat(T::GruUh, duh, &mut grad);
        put_vec(T::GruBh, dbh, &mut grad);
        put_mat(T::GruWx, trace.feat.t().dot(&dgx), &mut grad);
        put_vec(T::GruBx, dgx.sum_axis(Axis(0)), &mut grad);

        let mut dfeat = dgx.dot(&self.mat(T::GruWx).t());
        relu_mask(&mut dfeat, &trace.feat);
        put_mat(T::ProjW, trace.act2.t().dot(&dfeat), &mut grad);
        put_vec(T::ProjB, dfeat.sum_axis(Axis(0)), &mut grad);
        let dact2_flat = dfeat.dot(&self.mat(T::ProjW).t());
        let mut dact2 = dact2_flat.into_shape_with_order((rows * d, c2)).expect("contiguous");
        let act2 = trace.act2.view().into_shape_with_order((rows * d, c2)).expect("contiguous").to_owned();
        relu_mask(&mut dact2, &act2);
        put_mat(T::Conv2W, trace.cols2.t().dot(&dact2), &mut grad);
        put_vec(T::Conv2B, dact2.sum_axis(Axis(0)), &mut grad);
        let dcols2 = dact2.dot(&self.mat(T::Conv2W).t());
        let dact1_flat = col2im(&dcols2, rows, d, c1, c.kernel);
        let mut dact1 = dact1_flat.into_shape_with_order((rows * d, c1)).expect("contiguous");
        relu_mask(&mut dact1, &trace.act1);
        put_mat(T::Conv1W, trace.cols1.t().dot(&dact1), &mut grad);
        put_vec(T::Conv1B, dact1.sum_axis(Axis(0)), &mut grad);
        grad
    }
}

/// Contact probabilities and pressures from output pre-activations.
pub(crate) fn squash(logits: ArrayView1<'_, f64>, outputs: usize) -> (Vec<f64>, Vec<f64>) {
    (
        logits.slice(s![..outputs]).iter().map(|&z| sigmoid(z)).collect(),
        logits.slice(s![outputs..]).iter().map(|&z| softplus(z)).collect(),
    )
}

