//! Minimal trainable sequence model: a single bidirectional gated recurrent
//! layer over real-valued input sequences with a linear output head, plus
//! from-scratch backpropagation and the Adadelta update rule.
//!
//! The cell is a standard GRU. Parameters live in one flat vector so the
//! optimizer, checkpoints and finite-difference checks all see the same
//! layout.

use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::mat::Mat;

const CHECKPOINT_MAGIC: &[u8; 4] = b"SSCM";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input has {got} columns, model expects {expected}")]
    InputDimMismatch { got: usize, expected: usize },
    #[error("checkpoint magic/version mismatch")]
    BadCheckpoint,
    #[error("checkpoint parameter count {got} does not match header dims ({expected})")]
    BadCheckpointLength { got: u64, expected: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Flat-parameter layout: two GRU cells (forward, backward) followed by the
/// output projection.
#[derive(Clone, Copy, Debug)]
struct Layout {
    input_dim: usize,
    hidden: usize,
    classes: usize,
}

#[derive(Clone, Copy)]
struct CellOffsets {
    wz: usize,
    wr: usize,
    wn: usize,
    uz: usize,
    ur: usize,
    un: usize,
    bz: usize,
    br: usize,
    bn: usize,
}

impl Layout {
    fn cell_len(&self) -> usize {
        3 * (self.hidden * self.input_dim + self.hidden * self.hidden + self.hidden)
    }

    fn head_offset(&self) -> usize {
        2 * self.cell_len()
    }

    fn total(&self) -> usize {
        self.head_offset() + self.classes * 2 * self.hidden + self.classes
    }

    fn cell(&self, dir: usize) -> CellOffsets {
        let base = dir * self.cell_len();
        let hd = self.hidden * self.input_dim;
        let hh = self.hidden * self.hidden;
        CellOffsets {
            wz: base,
            wr: base + hd,
            wn: base + 2 * hd,
            uz: base + 3 * hd,
            ur: base + 3 * hd + hh,
            un: base + 3 * hd + 2 * hh,
            bz: base + 3 * hd + 3 * hh,
            br: base + 3 * hd + 3 * hh + self.hidden,
            bn: base + 3 * hd + 3 * hh + 2 * self.hidden,
        }
    }

    fn wo(&self) -> usize {
        self.head_offset()
    }

    fn bo(&self) -> usize {
        self.head_offset() + self.classes * 2 * self.hidden
    }
}

/// `out += m * v` for a row-major `rows x cols` matrix slice.
fn matvec_acc(m: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &m[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (w, x) in row.iter().zip(v) {
            acc += w * x;
        }
        out[r] += acc;
    }
}

/// `out += m^T * v`.
fn matvec_t_acc(m: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &m[r * cols..(r + 1) * cols];
        let vr = v[r];
        for (o, w) in out.iter_mut().zip(row) {
            *o += w * vr;
        }
    }
}

/// `grad += a (outer) b`.
fn outer_acc(grad: &mut [f64], a: &[f64], b: &[f64]) {
    for (i, &ai) in a.iter().enumerate() {
        let row = &mut grad[i * b.len()..(i + 1) * b.len()];
        for (g, &bj) in row.iter_mut().zip(b) {
            *g += ai * bj;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Clone, Debug)]
struct StepCache {
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    h_prev: Vec<f64>,
    rh: Vec<f64>,
}

/// Intermediate activations kept for backpropagation. Index k is the
/// processing step; the backward direction processes timesteps in reverse.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    steps: [Vec<StepCache>; 2],
    hidden: [Vec<Vec<f64>>; 2],
}

#[derive(Clone, Debug)]
pub struct SeqModel {
    layout: Layout,
    params: Vec<f64>,
}

impl SeqModel {
    /// Fresh model with uniform fan-in-scaled initialization, deterministic
    /// for a given seed.
    pub fn new(input_dim: usize, hidden_dim: usize, class_count: usize, seed: u64) -> Self {
        assert!(input_dim > 0 && hidden_dim > 0 && class_count > 1);
        let layout = Layout { input_dim, hidden: hidden_dim, classes: class_count };
        let mut params = vec![0.0; layout.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_scale = 1.0 / (input_dim as f64).sqrt();
        let u_scale = 1.0 / (hidden_dim as f64).sqrt();
        let o_scale = 1.0 / (2.0 * hidden_dim as f64).sqrt();
        for dir in 0..2 {
            let off = layout.cell(dir);
            let hd = hidden_dim * input_dim;
            let hh = hidden_dim * hidden_dim;
            for i in 0..3 * hd {
                params[off.wz + i] = rng.random_range(-w_scale..w_scale);
            }
            for i in 0..3 * hh {
                params[off.uz + i] = rng.random_range(-u_scale..u_scale);
            }
            // biases start at zero
        }
        for i in 0..class_count * 2 * hidden_dim {
            params[layout.wo() + i] = rng.random_range(-o_scale..o_scale);
        }
        SeqModel { layout, params }
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.layout.hidden
    }

    pub fn class_count(&self) -> usize {
        self.layout.classes
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Logits for a `T x D` input, shape `T x C`.
    pub fn forward(&self, input: &Mat) -> Result<Mat, ModelError> {
        Ok(self.forward_traced(input)?.0)
    }

    /// Forward pass that also returns the activations needed by
    /// [`SeqModel::backward`].
    pub fn forward_traced(&self, input: &Mat) -> Result<(Mat, ForwardTrace), ModelError> {
        if input.cols() != self.layout.input_dim {
            return Err(ModelError::InputDimMismatch {
                got: input.cols(),
                expected: self.layout.input_dim,
            });
        }
        let t_len = input.rows();
        let h = self.layout.hidden;
        let mut trace = ForwardTrace {
            steps: [Vec::with_capacity(t_len), Vec::with_capacity(t_len)],
            hidden: [vec![vec![0.0; h]; t_len], vec![vec![0.0; h]; t_len]],
        };

        for dir in 0..2 {
            let off = self.layout.cell(dir);
            let mut state = vec![0.0; h];
            for k in 0..t_len {
                let t = if dir == 0 { k } else { t_len - 1 - k };
                let x = input.row(t);
                let cache = self.cell_step(off, x, &state);
                let mut next = vec![0.0; h];
                for i in 0..h {
                    next[i] = (1.0 - cache.z[i]) * cache.n[i] + cache.z[i] * state[i];
                }
                trace.hidden[dir][t] = next.clone();
                trace.steps[dir].push(cache);
                state = next;
            }
        }

        let mut logits = Mat::zeros(t_len, self.layout.classes);
        let wo = &self.params[self.layout.wo()..self.layout.bo()];
        let bo = &self.params[self.layout.bo()..];
        let mut hcat = vec![0.0; 2 * h];
        for t in 0..t_len {
            hcat[..h].copy_from_slice(&trace.hidden[0][t]);
            hcat[h..].copy_from_slice(&trace.hidden[1][t]);
            let row = logits.row_mut(t);
            row.copy_from_slice(bo);
            matvec_acc(wo, self.layout.classes, 2 * h, &hcat, row);
        }
        Ok((logits, trace))
    }

    fn cell_step(&self, off: CellOffsets, x: &[f64], h_prev: &[f64]) -> StepCache {
        let h = self.layout.hidden;
        let d = self.layout.input_dim;
        let p = &self.params;

        let mut az = p[off.bz..off.bz + h].to_vec();
        matvec_acc(&p[off.wz..off.wz + h * d], h, d, x, &mut az);
        matvec_acc(&p[off.uz..off.uz + h * h], h, h, h_prev, &mut az);
        let z: Vec<f64> = az.iter().map(|&v| sigmoid(v)).collect();

        let mut ar = p[off.br..off.br + h].to_vec();
        matvec_acc(&p[off.wr..off.wr + h * d], h, d, x, &mut ar);
        matvec_acc(&p[off.ur..off.ur + h * h], h, h, h_prev, &mut ar);
        let r: Vec<f64> = ar.iter().map(|&v| sigmoid(v)).collect();

        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let mut an = p[off.bn..off.bn + h].to_vec();
        matvec_acc(&p[off.wn..off.wn + h * d], h, d, x, &mut an);
        matvec_acc(&p[off.un..off.un + h * h], h, h, &rh, &mut an);
        let n: Vec<f64> = an.iter().map(|&v| v.tanh()).collect();

        StepCache { z, r, n, h_prev: h_prev.to_vec(), rh }
    }

    /// Full parameter gradient for `d loss / d logits = upstream`, in the
    /// flat layout. Gradients with respect to the input are not needed (the
    /// inputs are data) and are not computed.
    pub fn backward(&self, input: &Mat, trace: &ForwardTrace, upstream: &Mat) -> Vec<f64> {
        let t_len = input.rows();
        let h = self.layout.hidden;
        let c = self.layout.classes;
        assert_eq!(upstream.rows(), t_len);
        assert_eq!(upstream.cols(), c);

        let mut grad = vec![0.0; self.params.len()];
        let wo = &self.params[self.layout.wo()..self.layout.bo()];

        // output head, collecting d loss / d hidden per direction
        let mut dhidden = [vec![vec![0.0; h]; t_len], vec![vec![0.0; h]; t_len]];
        {
            let mut hcat = vec![0.0; 2 * h];
            let mut dhcat = vec![0.0; 2 * h];
            for t in 0..t_len {
                hcat[..h].copy_from_slice(&trace.hidden[0][t]);
                hcat[h..].copy_from_slice(&trace.hidden[1][t]);
                let up = upstream.row(t);
                outer_acc(&mut grad[self.layout.wo()..self.layout.bo()], up, &hcat);
                for (g, &u) in grad[self.layout.bo()..].iter_mut().zip(up) {
                    *g += u;
                }
                dhcat.fill(0.0);
                matvec_t_acc(wo, c, 2 * h, up, &mut dhcat);
                dhidden[0][t].copy_from_slice(&dhcat[..h]);
                dhidden[1][t].copy_from_slice(&dhcat[h..]);
            }
        }

        for dir in 0..2 {
            self.cell_backward(dir, input, trace, &dhidden[dir], &mut grad);
        }
        grad
    }

    fn cell_backward(
        &self,
        dir: usize,
        input: &Mat,
        trace: &ForwardTrace,
        dhidden: &[Vec<f64>],
        grad: &mut [f64],
    ) {
        let t_len = input.rows();
        let h = self.layout.hidden;
        let d = self.layout.input_dim;
        let off = self.layout.cell(dir);
        let p = &self.params;

        let mut dh_carry = vec![0.0; h];
        let mut dh = vec![0.0; h];
        let mut dn = vec![0.0; h];
        let mut dz = vec![0.0; h];
        let mut dan = vec![0.0; h];
        let mut drh = vec![0.0; h];
        let mut dr = vec![0.0; h];
        let mut daz = vec![0.0; h];
        let mut dar = vec![0.0; h];

        for k in (0..t_len).rev() {
            let t = if dir == 0 { k } else { t_len - 1 - k };
            let cache = &trace.steps[dir][k];
            let x = input.row(t);

            for i in 0..h {
                dh[i] = dhidden[t][i] + dh_carry[i];
            }
            // h = (1 - z) * n + z * h_prev
            for i in 0..h {
                dn[i] = dh[i] * (1.0 - cache.z[i]);
                dz[i] = dh[i] * (cache.h_prev[i] - cache.n[i]);
                dh_carry[i] = dh[i] * cache.z[i];
            }
            // n = tanh(an)
            for i in 0..h {
                dan[i] = dn[i] * (1.0 - cache.n[i] * cache.n[i]);
            }
            outer_acc(&mut grad[off.wn..off.wn + h * d], &dan, x);
            outer_acc(&mut grad[off.un..off.un + h * h], &dan, &cache.rh);
            for (g, &v) in grad[off.bn..off.bn + h].iter_mut().zip(&dan) {
                *g += v;
            }
            drh.fill(0.0);
            matvec_t_acc(&p[off.un..off.un + h * h], h, h, &dan, &mut drh);
            for i in 0..h {
                dr[i] = drh[i] * cache.h_prev[i];
                dh_carry[i] += drh[i] * cache.r[i];
            }
            // gates
            for i in 0..h {
                daz[i] = dz[i] * cache.z[i] * (1.0 - cache.z[i]);
                dar[i] = dr[i] * cache.r[i] * (1.0 - cache.r[i]);
            }
            outer_acc(&mut grad[off.wz..off.wz + h * d], &daz, x);
            outer_acc(&mut grad[off.uz..off.uz + h * h], &daz, &cache.h_prev);
            for (g, &v) in grad[off.bz..off.bz + h].iter_mut().zip(&daz) {
                *g += v;
            }
            outer_acc(&mut grad[off.wr..off.wr + h * d], &dar, x);
            outer_acc(&mut grad[off.ur..off.ur + h * h], &dar, &cache.h_prev);
            for (g, &v) in grad[off.br..off.br + h].iter_mut().zip(&dar) {
                *g += v;
            }
            matvec_t_acc(&p[off.uz..off.uz + h * h], h, h, &daz, &mut dh_carry);
            matvec_t_acc(&p[off.ur..off.ur + h * h], h, h, &dar, &mut dh_carry);
        }
    }

    /// Writes the versioned flat-binary checkpoint.
    pub fn save(&self, mut writer: impl Write) -> Result<(), ModelError> {
        writer.write_all(CHECKPOINT_MAGIC)?;
        writer.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        writer.write_all(&(self.layout.input_dim as u32).to_le_bytes())?;
        writer.write_all(&(self.layout.hidden as u32).to_le_bytes())?;
        writer.write_all(&(self.layout.classes as u32).to_le_bytes())?;
        writer.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for v in &self.params {
            writer.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(mut reader: impl Read) -> Result<Self, ModelError> {
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic)?;
        let mut u32buf = [0u8; 4];
        reader.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if &magic != CHECKPOINT_MAGIC || version != CHECKPOINT_VERSION {
            return Err(ModelError::BadCheckpoint);
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            reader.read_exact(&mut u32buf)?;
            *d = u32::from_le_bytes(u32buf) as usize;
        }
        let mut u64buf = [0u8; 8];
        reader.read_exact(&mut u64buf)?;
        let count = u64::from_le_bytes(u64buf);
        let layout = Layout { input_dim: dims[0], hidden: dims[1], classes: dims[2] };
        if count != layout.total() as u64 {
            return Err(ModelError::BadCheckpointLength { got: count, expected: layout.total() as u64 });
        }
        let mut params = Vec::with_capacity(count as usize);
        let mut f64buf = [0u8; 8];
        for _ in 0..count {
            reader.read_exact(&mut f64buf)?;
            params.push(f64::from_le_bytes(f64buf));
        }
        Ok(SeqModel { layout, params })
    }
}

/// Adadelta accumulator state. No learning-rate hyperparameter; step sizes
/// adapt from the running averages of squared gradients and updates.
#[derive(Clone, Debug)]
pub struct Adadelta {
    rho: f64,
    epsilon: f64,
    acc_grad: Vec<f64>,
    acc_update: Vec<f64>,
}

impl Adadelta {
    pub fn new(param_count: usize) -> Self {
        Self::with_params(param_count, 0.95, 1e-6)
    }

    pub fn with_params(param_count: usize, rho: f64, epsilon: f64) -> Self {
        assert!((0.0..1.0).contains(&rho));
        assert!(epsilon > 0.0);
        Adadelta {
            rho,
            epsilon,
            acc_grad: vec![0.0; param_count],
            acc_update: vec![0.0; param_count],
        }
    }

    pub fn accumulators(&self) -> (&[f64], &[f64]) {
        (&self.acc_grad, &self.acc_update)
    }

    /// One update: `acc_g = rho*acc_g + (1-rho)*g^2`,
    /// `delta = -sqrt(acc_u + eps)/sqrt(acc_g + eps) * g`,
    /// `acc_u = rho*acc_u + (1-rho)*delta^2`, `p += delta`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.acc_grad.len());
        assert_eq!(grads.len(), self.acc_grad.len());
        for i in 0..params.len() {
            let g = grads[i];
            self.acc_grad[i] = self.rho * self.acc_grad[i] + (1.0 - self.rho) * g * g;
            let delta = -((self.acc_update[i] + self.epsilon).sqrt()
                / (self.acc_grad[i] + self.epsilon).sqrt())
                * g;
            self.acc_update[i] = self.rho * self.acc_update[i] + (1.0 - self.rho) * delta * delta;
            params[i] += delta;
        }
    }
}
