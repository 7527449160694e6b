//! Dense actor-critic network over a flat parameter vector.
//!
//! Layout of [`PolicyParams::flat`]: actor layers, then critic layers, each as
//! a row-major `in × out` weight block followed by `out` biases, then the
//! three log-std entries.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ACTION_DIM: usize = 3;
const LN_2PI: f64 = 1.837_877_066_409_345_5;
const CHECKPOINT_FORMAT: &str = "gaterace-policy";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("parameters contain non-finite values")]
    NonFinite,
    #[error("checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path}: {message}")]
    Format { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub flat: Vec<f64>,
    pub obs_dim: usize,
    pub hidden: Vec<usize>,
    /// Seed used for initialization; kept for the checkpoint header.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorCriticOutput {
    pub action_mean: [f64; ACTION_DIM],
    pub action_log_std: [f64; ACTION_DIM],
    pub value: f64,
}

/// `(in, out)` for each dense layer of one trunk plus its head.
fn trunk_shapes(obs_dim: usize, hidden: &[usize], out: usize) -> Vec<(usize, usize)> {
    let mut dims = vec![obs_dim];
    dims.extend_from_slice(hidden);
    dims.push(out);
    dims.windows(2).map(|w| (w[0], w[1])).collect()
}

fn block_len(shapes: &[(usize, usize)]) -> usize {
    shapes.iter().map(|(i, o)| i * o + o).sum()
}

/// Orthogonal `rows × cols` matrix scaled by `gain`.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (m, n) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::<f64>::from_fn(m, n, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    // sign fix so the distribution is uniform over orthogonal matrices
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let q = if rows >= cols { q } else { q.transpose() };
    q * gain
}

impl PolicyParams {
    /// Seeded orthogonal initialization: gain √2 on hidden layers, 0.01 on the
    /// action head, 1 on the value head; zero biases; log-std at ln 0.5.
    pub fn init(obs_dim: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flat = Vec::with_capacity(Self::expected_len(obs_dim, hidden));
        for (out, head_gain) in [(ACTION_DIM, 0.01), (1, 1.0)] {
            let shapes = trunk_shapes(obs_dim, hidden, out);
            let last = shapes.len() - 1;
            for (l, &(i, o)) in shapes.iter().enumerate() {
                let gain = if l == last {
                    head_gain
                } else {
                    std::f64::consts::SQRT_2
                };
                let w = orthogonal(i, o, gain, &mut rng);
                for r in 0..i {
                    for c in 0..o {
                        flat.push(w[(r, c)]);
                    }
                }
                flat.extend(std::iter::repeat_n(0.0, o));
            }
        }
        flat.extend([0.5f64.ln(); ACTION_DIM]);
        Self {
            flat,
            obs_dim,
            hidden: hidden.to_vec(),
            seed,
        }
    }

    pub fn zeros(obs_dim: usize, hidden: &[usize]) -> Self {
        Self {
            flat: vec![0.0; Self::expected_len(obs_dim, hidden)],
            obs_dim,
            hidden: hidden.to_vec(),
            seed: 0,
        }
    }

    pub fn expected_len(obs_dim: usize, hidden: &[usize]) -> usize {
        block_len(&trunk_shapes(obs_dim, hidden, ACTION_DIM))
            + block_len(&trunk_shapes(obs_dim, hidden, 1))
            + ACTION_DIM
    }

    /// Layer shapes of the actor followed by the critic.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut v = self.actor_shapes();
        v.extend(self.critic_shapes());
        v
    }

    fn actor_shapes(&self) -> Vec<(usize, usize)> {
        trunk_shapes(self.obs_dim, &self.hidden, ACTION_DIM)
    }

    fn critic_shapes(&self) -> Vec<(usize, usize)> {
        trunk_shapes(self.obs_dim, &self.hidden, 1)
    }

    fn critic_offset(&self) -> usize {
        block_len(&self.actor_shapes())
    }

    /// Range of flat indices owned by the actor trunk and head.
    pub fn actor_range(&self) -> std::ops::Range<usize> {
        0..self.critic_offset()
    }

    pub fn critic_range(&self) -> std::ops::Range<usize> {
        self.critic_offset()..self.flat.len() - ACTION_DIM
    }

    pub fn log_std_range(&self) -> std::ops::Range<usize> {
        self.flat.len() - ACTION_DIM..self.flat.len()
    }

    pub fn log_std(&self) -> [f64; ACTION_DIM] {
        let r = self.log_std_range();
        [
            self.flat[r.start],
            self.flat[r.start + 1],
            self.flat[r.start + 2],
        ]
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let expected = Self::expected_len(self.obs_dim, &self.hidden);
        if self.flat.len() != expected {
            return Err(NnError::ShapeMismatch {
                expected,
                got: self.flat.len(),
            });
        }
        if !self.flat.iter().all(|x| x.is_finite()) {
            return Err(NnError::NonFinite);
        }
        Ok(())
    }

    /// Raw little-endian bytes of the flat vector.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.flat.iter().flat_map(|x| x.to_le_bytes()).collect()
    }
}

/// Intermediate activations of a batched forward pass.
#[derive(Debug, Clone)]
pub struct BatchCache {
    input: Array2<f64>,
    actor_hidden: Vec<Array2<f64>>,
    critic_hidden: Vec<Array2<f64>>,
    pub means: Array2<f64>,
    pub values: Array1<f64>,
}

fn layer_views<'a>(
    flat: &'a [f64],
    shapes: &[(usize, usize)],
    mut offset: usize,
) -> Vec<(ArrayView2<'a, f64>, ArrayView1<'a, f64>)> {
    shapes
        .iter()
        .map(|&(i, o)| {
            let w = ArrayView2::from_shape((i, o), &flat[offset..offset + i * o]).expect("shape");
            offset += i * o;
            let b = ArrayView1::from(&flat[offset..offset + o]);
            offset += o;
            (w, b)
        })
        .collect()
}

fn trunk_forward(
    input: &Array2<f64>,
    layers: &[(ArrayView2<f64>, ArrayView1<f64>)],
) -> (Vec<Array2<f64>>, Array2<f64>) {
    let mut hidden = Vec::with_capacity(layers.len() - 1);
    let mut x = input.clone();
    for (l, (w, b)) in layers.iter().enumerate() {
        let mut z = x.dot(w);
        z += b;
        if l + 1 < layers.len() {
            z.mapv_inplace(f64::tanh);
            hidden.push(z.clone());
            x = z;
        } else {
            return (hidden, z);
        }
    }
    unreachable!("trunk has at least one layer")
}

/// Forward pass over a batch of observations, one per row.
pub fn forward_batch(params: &PolicyParams, obs: Array2<f64>) -> Result<BatchCache, NnError> {
    if obs.ncols() != params.obs_dim {
        return Err(NnError::ShapeMismatch {
            expected: params.obs_dim,
            got: obs.ncols(),
        });
    }
    let expected = PolicyParams::expected_len(params.obs_dim, &params.hidden);
    if params.flat.len() != expected {
        return Err(NnError::ShapeMismatch {
            expected,
            got: params.flat.len(),
        });
    }
    let actor = layer_views(&params.flat, &params.actor_shapes(), 0);
    let critic = layer_views(
        &params.flat,
        &params.critic_shapes(),
        params.critic_offset(),
    );
    let (actor_hidden, means) = trunk_forward(&obs, &actor);
    let (critic_hidden, values) = trunk_forward(&obs, &critic);
    Ok(BatchCache {
        input: obs,
        actor_hidden,
        critic_hidden,
        means,
        values: values.column(0).to_owned(),
    })
}

pub fn forward(params: &PolicyParams, obs: &[f64]) -> Result<ActorCriticOutput, NnError> {
    let row = Array2::from_shape_vec((1, obs.len()), obs.to_vec()).expect("row");
    let cache = forward_batch(params, row)?;
    Ok(cache.output(0, params))
}

impl BatchCache {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn output(&self, i: usize, params: &PolicyParams) -> ActorCriticOutput {
        let m = self.means.row(i);
        ActorCriticOutput {
            action_mean: [m[0], m[1], m[2]],
            action_log_std: params.log_std(),
            value: self.values[i],
        }
    }
}

pub fn gaussian_log_prob(mean: &[f64; 3], log_std: &[f64; 3], action: &[f64; 3]) -> f64 {
    (0..ACTION_DIM)
        .map(|k| {
            let z = (action[k] - mean[k]) * (-log_std[k]).exp();
            -0.5 * z * z - log_std[k] - 0.5 * LN_2PI
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f64; 3]) -> f64 {
    log_std.iter().map(|l| 0.5 * (1.0 + LN_2PI) + l).sum()
}

pub fn log_prob_and_entropy(out: &ActorCriticOutput, action: &[f64; 3]) -> (f64, f64) {
    (
        gaussian_log_prob(&out.action_mean, &out.action_log_std, action),
        gaussian_entropy(&out.action_log_std),
    )
}

/// Draw an action from the policy distribution. Not clipped.
pub fn sample_action<R: rand::Rng + ?Sized>(out: &ActorCriticOutput, rng: &mut R) -> [f64; 3] {
    let mut a = [0.0; 3];
    for k in 0..ACTION_DIM {
        let e: f64 = StandardNormal.sample(rng);
        a[k] = out.action_mean[k] + out.action_log_std[k].exp() * e;
    }
    a
}

fn trunk_backward(
    grad: &mut [f64],
    layers: &[(ArrayView2<f64>, ArrayView1<f64>)],
    shapes: &[(usize, usize)],
    mut offset: usize,
    input: &Array2<f64>,
    hidden: &[Array2<f64>],
    out_delta: Array2<f64>,
) {
    let mut offsets = Vec::with_capacity(shapes.len());
    for &(i, o) in shapes {
        offsets.push(offset);
        offset += i * o + o;
    }
    let mut delta = out_delta;
    for l in (0..layers.len()).rev() {
        let x = if l == 0 { input } else { &hidden[l - 1] };
        let (i, o) = shapes[l];
        let gw = x.t().dot(&delta);
        let gb = delta.sum_axis(Axis(0));
        let off = offsets[l];
        for (g, v) in grad[off..off + i * o].iter_mut().zip(gw.iter()) {
            *g += v;
        }
        for (g, v) in grad[off + i * o..off + i * o + o].iter_mut().zip(gb.iter()) {
            *g += v;
        }
        if l > 0 {
            let mut d = delta.dot(&layers[l].0.t());
            d.zip_mut_with(&hidden[l - 1], |d, h| *d *= 1.0 - h * h);
            delta = d;
        }
    }
}

/// Gradient of `Σ_i (c_logp[i]·logp_i + c_value[i]·v_i) + c_ent·H` with
/// respect to every parameter.
pub fn backward_batch(
    params: &PolicyParams,
    cache: &BatchCache,
    actions: ArrayView2<f64>,
    c_logp: &[f64],
    c_value: &[f64],
    c_ent: f64,
) -> Result<Vec<f64>, NnError> {
    let n = cache.len();
    for len in [actions.nrows(), c_logp.len(), c_value.len()] {
        if len != n {
            return Err(NnError::ShapeMismatch {
                expected: n,
                got: len,
            });
        }
    }
    if actions.ncols() != ACTION_DIM {
        return Err(NnError::ShapeMismatch {
            expected: ACTION_DIM,
            got: actions.ncols(),
        });
    }
    let log_std = params.log_std();
    let inv_var: Vec<f64> = log_std.iter().map(|l| (-2.0 * l).exp()).collect();
    let mut grad = vec![0.0; params.flat.len()];

    let mut mean_delta = Array2::<f64>::zeros((n, ACTION_DIM));
    let mut g_log_std = [c_ent; ACTION_DIM];
    for i in 0..n {
        for k in 0..ACTION_DIM {
            let diff = actions[(i, k)] - cache.means[(i, k)];
            mean_delta[(i, k)] = c_logp[i] * diff * inv_var[k];
            g_log_std[k] += c_logp[i] * (diff * diff * inv_var[k] - 1.0);
        }
    }
    let value_delta = Array2::from_shape_vec((n, 1), c_value.to_vec()).expect("column");

    let actor_shapes = params.actor_shapes();
    let critic_shapes = params.critic_shapes();
    let actor = layer_views(&params.flat, &actor_shapes, 0);
    let critic = layer_views(&params.flat, &critic_shapes, params.critic_offset());
    trunk_backward(
        &mut grad,
        &actor,
        &actor_shapes,
        0,
        &cache.input,
        &cache.actor_hidden,
        mean_delta,
    );
    trunk_backward(
        &mut grad,
        &critic,
        &critic_shapes,
        params.critic_offset(),
        &cache.input,
        &cache.critic_hidden,
        value_delta,
    );
    let r = params.log_std_range();
    grad[r].copy_from_slice(&g_log_std);
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCoefficients {
    pub c_logp: f64,
    pub c_value: f64,
    pub c_ent: f64,
}

/// Single-sample gradient of `c_logp·logp + c_value·value + c_ent·entropy`.
pub fn backward(
    params: &PolicyParams,
    obs: &[f64],
    action: &[f64; 3],
    coeffs: GradCoefficients,
) -> Result<Vec<f64>, NnError> {
    let row = Array2::from_shape_vec((1, obs.len()), obs.to_vec()).expect("row");
    let cache = forward_batch(params, row)?;
    let act = ArrayView2::from_shape((1, 3), &action[..]).expect("row");
    backward_batch(
        params,
        &cache,
        act,
        &[coeffs.c_logp],
        &[coeffs.c_value],
        coeffs.c_ent,
    )
}

/// Rows `range` of a row-major buffer as an owned batch.
pub fn batch_from_rows(rows: &[f64], dim: usize, range: std::ops::Range<usize>) -> Array2<f64> {
    let a = ArrayView2::from_shape((rows.len() / dim, dim), rows).expect("row-major buffer");
    a.slice(s![range, ..]).to_owned()
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    obs_dim: usize,
    hidden: Vec<usize>,
    layer_shapes: Vec<(usize, usize)>,
    seed: u64,
    num_params: usize,
}

/// One JSON header line followed by the parameters as little-endian f64.
pub fn save_checkpoint(params: &PolicyParams, path: &Path) -> Result<(), NnError> {
    let io = |source| NnError::Io {
        path: path.display().to_string(),
        source,
    };
    params.validate()?;
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        obs_dim: params.obs_dim,
        hidden: params.hidden.clone(),
        layer_shapes: params.layer_shapes(),
        seed: params.seed,
        num_params: params.flat.len(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    let line = serde_json::to_string(&header).expect("header serializes");
    writeln!(f, "{line}").map_err(io)?;
    f.write_all(&params.to_bytes()).map_err(io)?;
    f.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyParams, NnError> {
    let p = path.display().to_string();
    let format_err = |message: String| NnError::Format {
        path: p.clone(),
        message,
    };
    let file = fs::File::open(path).map_err(|source| NnError::Io {
        path: p.clone(),
        source,
    })?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    reader.read_line(&mut line).map_err(|source| NnError::Io {
        path: p.clone(),
        source,
    })?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| format_err(format!("bad header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(format_err(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    let expected = PolicyParams::expected_len(header.obs_dim, &header.hidden);
    if header.num_params != expected {
        return Err(format_err(format!(
            "header declares {} parameters, shapes need {expected}",
            header.num_params
        )));
    }
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|source| NnError::Io {
            path: p.clone(),
            source,
        })?;
    if bytes.len() != 8 * expected {
        return Err(format_err(format!(
            "expected {} payload bytes, found {}",
            8 * expected,
            bytes.len()
        )));
    }
    let flat = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let params = PolicyParams {
        flat,
        obs_dim: header.obs_dim,
        hidden: header.hidden,
        seed: header.seed,
    };
    params.validate()?;
    Ok(params)
}
