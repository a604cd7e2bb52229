//! FiLM-conditioned residual MLP with a hand-written reverse pass.
//!
//! Layout, with `temb(t)` the sinusoidal time features:
//!
//! ```text
//! h0   = [y, temb(t)] W_in + b_in
//! c    = silu([x, temb(t)] W_c + b_c)
//! per block:
//!   u  = h W_1 + b_1
//!   z  = u * (1 + c W_s + b_s) + (c W_h + b_h)
//!   h  = h + silu(z) W_2 + b_2
//! out  = h W_out + b_out
//! ```
//!
//! Activations are row-major `batch × features`; weights are `fan_in × fan_out`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Number of sinusoidal frequencies in the time embedding.
pub const TIME_FREQUENCIES: usize = 8;
/// Width of the time embedding (a sine and a cosine per frequency).
pub const TIME_FEATURES: usize = 2 * TIME_FREQUENCIES;

/// Shape of a network: target/state width, conditioning width, hidden width, block count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub cond_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, cond_dim: usize, hidden: usize, blocks: usize) -> Result<Self> {
        let arch = Architecture {
            input_dim,
            cond_dim,
            hidden,
            blocks,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("cond_dim", self.cond_dim),
            ("hidden", self.hidden),
            ("blocks", self.blocks),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Affine layer `a W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Matrix::zeros((fan_in, fan_out)),
            bias: Matrix::zeros((1, fan_out)),
        }
    }

    fn random(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        Dense {
            weight: Matrix::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng)),
            bias: Matrix::zeros((1, fan_out)),
        }
    }

    fn apply(&self, input: &Matrix) -> Matrix {
        let mut out = input.dot(&self.weight);
        out += &self.bias;
        out
    }

    fn accumulate_grad(&mut self, input: &Matrix, d_out: &Matrix) {
        self.weight += &input.t().dot(d_out);
        self.bias += &d_out.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
}

/// One residual block: a two-layer MLP whose hidden pre-activation is FiLM-modulated.
#[derive(Debug, Clone, PartialEq)]
pub struct FilmBlock {
    pub main_in: Dense,
    pub main_out: Dense,
    pub film_scale: Dense,
    pub film_shift: Dense,
}

/// All trainable tensors of a network. Gradients and optimizer moments share this type.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    arch: Architecture,
    pub input_embed: Dense,
    pub cond_embed: Dense,
    pub blocks: Vec<FilmBlock>,
    pub head: Dense,
}

/// A minibatch of `(state, t, x, target)` rows.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Matrix,
    pub times: Array1<f64>,
    pub conds: Matrix,
    pub targets: Matrix,
}

impl Batch {
    /// Assemble a batch from per-item tuples.
    pub fn from_items(items: &[(Vec<f64>, f64, Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("batch must contain at least one item"))?;
        let (q, p) = (first.0.len(), first.2.len());
        let n = items.len();
        let mut batch = Batch {
            states: Matrix::zeros((n, q)),
            times: Array1::zeros(n),
            conds: Matrix::zeros((n, p)),
            targets: Matrix::zeros((n, q)),
        };
        for (i, (y, t, x, g)) in items.iter().enumerate() {
            if y.len() != q || x.len() != p || g.len() != q {
                return Err(Error::invalid(format!(
                    "batch item {i} has inconsistent dimensions"
                )));
            }
            batch.states.row_mut(i).assign(&ndarray::aview1(y));
            batch.times[i] = *t;
            batch.conds.row_mut(i).assign(&ndarray::aview1(x));
            batch.targets.row_mut(i).assign(&ndarray::aview1(g));
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sinusoidal features `[sin(2^k t), cos(2^k t)]` for k in 0..8.
pub fn time_features(t: f64) -> [f64; TIME_FEATURES] {
    let mut out = [0.0; TIME_FEATURES];
    for k in 0..TIME_FREQUENCIES {
        let (s, c) = ((1u32 << k) as f64 * t).sin_cos();
        out[k] = s;
        out[TIME_FREQUENCIES + k] = c;
    }
    out
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

fn concat_time(values: ArrayView2<f64>, times: &[f64]) -> Matrix {
    let (n, d) = values.dim();
    let mut out = Matrix::zeros((n, d + TIME_FEATURES));
    out.slice_mut(s![.., ..d]).assign(&values);
    for (mut row, &t) in out.outer_iter_mut().zip(times) {
        let feats = time_features(t);
        row.slice_mut(s![d..]).assign(&ndarray::aview1(&feats));
    }
    out
}

/// FiLM modulation for a batch: either one row per item or a single shared row.
struct Film {
    scale: Matrix,
    shift: Matrix,
}

struct BlockTrace {
    h_in: Matrix,
    u: Matrix,
    z: Matrix,
    a: Matrix,
}

struct ForwardTrace {
    y_in: Matrix,
    c_in: Matrix,
    c_pre: Matrix,
    cond: Matrix,
    films: Vec<Film>,
    blocks: Vec<BlockTrace>,
    h_out: Matrix,
}

impl NetworkParams {
    /// Deterministic initialization from `seed`.
    ///
    /// Main and head weights are uniform in `±1/sqrt(fan_in)` with zero biases.
    /// FiLM generators start at zero, so every block begins with scale 1 and shift 0.
    pub fn init(seed: u64, arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = arch.hidden;
        let input_embed = Dense::random(arch.input_dim + TIME_FEATURES, h, &mut rng);
        let cond_embed = Dense::random(arch.cond_dim + TIME_FEATURES, h, &mut rng);
        let blocks = (0..arch.blocks)
            .map(|_| FilmBlock {
                main_in: Dense::random(h, h, &mut rng),
                main_out: Dense::random(h, h, &mut rng),
                film_scale: Dense::zeros(h, h),
                film_shift: Dense::zeros(h, h),
            })
            .collect();
        let head = Dense::random(h, arch.input_dim, &mut rng);
        Ok(NetworkParams {
            arch,
            input_embed,
            cond_embed,
            blocks,
            head,
        })
    }

    /// A network of the same architecture with every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    /// Tensor names in the canonical order used by [`tensors`](Self::tensors).
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let mut push = |prefix: &str| {
            names.push(format!("{prefix}.weight"));
            names.push(format!("{prefix}.bias"));
        };
        push("input_embed");
        push("cond_embed");
        for i in 0..self.blocks.len() {
            push(&format!("blocks.{i}.main_in"));
            push(&format!("blocks.{i}.main_out"));
            push(&format!("blocks.{i}.film_scale"));
            push(&format!("blocks.{i}.film_shift"));
        }
        push("head");
        names
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![
            &self.input_embed.weight,
            &self.input_embed.bias,
            &self.cond_embed.weight,
            &self.cond_embed.bias,
        ];
        for b in &self.blocks {
            out.extend([
                &b.main_in.weight,
                &b.main_in.bias,
                &b.main_out.weight,
                &b.main_out.bias,
                &b.film_scale.weight,
                &b.film_scale.bias,
                &b.film_shift.weight,
                &b.film_shift.bias,
            ]);
        }
        out.extend([&self.head.weight, &self.head.bias]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![
            &mut self.input_embed.weight,
            &mut self.input_embed.bias,
            &mut self.cond_embed.weight,
            &mut self.cond_embed.bias,
        ];
        for b in &mut self.blocks {
            out.extend([
                &mut b.main_in.weight,
                &mut b.main_in.bias,
                &mut b.main_out.weight,
                &mut b.main_out.bias,
                &mut b.film_scale.weight,
                &mut b.film_scale.bias,
                &mut b.film_shift.weight,
                &mut b.film_shift.bias,
            ]);
        }
        out.extend([&mut self.head.weight, &mut self.head.bias]);
        out
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Shapes agree tensor by tensor.
    pub fn same_shape(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self
                .tensors()
                .iter()
                .zip(other.tensors())
                .all(|(a, b)| a.dim() == b.dim())
    }

    /// Single-item forward pass.
    pub fn forward(&self, y_state: &[f64], t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let states = ndarray::aview1(y_state).insert_axis(Axis(0));
        let conds = ndarray::aview1(x).insert_axis(Axis(0));
        let out = self.forward_batch(states, &[t], conds)?;
        Ok(out.into_raw_vec_and_offset().0)
    }

    /// Forward pass over a batch where every row has its own `(t, x)`.
    pub fn forward_batch(
        &self,
        states: ArrayView2<f64>,
        times: &[f64],
        conds: ArrayView2<f64>,
    ) -> Result<Matrix> {
        self.check_batch(states, times, conds)?;
        let trace = self.run(states, times, conds, false);
        Ok(self.head.apply(&trace.h_out))
    }

    /// Forward pass where every row shares one `(t, x)`; the conditioning path runs once.
    pub fn forward_shared(&self, states: ArrayView2<f64>, t: f64, x: &[f64]) -> Result<Matrix> {
        if states.ncols() != self.arch.input_dim {
            return Err(Error::invalid(format!(
                "state width {} does not match network input width {}",
                states.ncols(),
                self.arch.input_dim
            )));
        }
        if x.len() != self.arch.cond_dim {
            return Err(Error::invalid(format!(
                "conditioning width {} does not match network width {}",
                x.len(),
                self.arch.cond_dim
            )));
        }
        let conds = ndarray::aview1(x).insert_axis(Axis(0));
        let cond = self.conditioning(conds, &[t]);
        let films = self.films(&cond);
        let times = vec![t; states.nrows()];
        let h = self.trunk(states, &times, &films, None);
        Ok(self.head.apply(&h))
    }

    fn check_batch(
        &self,
        states: ArrayView2<f64>,
        times: &[f64],
        conds: ArrayView2<f64>,
    ) -> Result<()> {
        let n = states.nrows();
        if states.ncols() != self.arch.input_dim {
            return Err(Error::invalid(format!(
                "state width {} does not match network input width {}",
                states.ncols(),
                self.arch.input_dim
            )));
        }
        if conds.ncols() != self.arch.cond_dim {
            return Err(Error::invalid(format!(
                "conditioning width {} does not match network width {}",
                conds.ncols(),
                self.arch.cond_dim
            )));
        }
        if times.len() != n || conds.nrows() != n {
            return Err(Error::invalid(
                "states, times and conditions must have the same row count",
            ));
        }
        Ok(())
    }

    fn conditioning(&self, conds: ArrayView2<f64>, times: &[f64]) -> (Matrix, Matrix, Matrix) {
        let c_in = concat_time(conds, times);
        let c_pre = self.cond_embed.apply(&c_in);
        let cond = c_pre.mapv(silu);
        (c_in, c_pre, cond)
    }

    fn films(&self, cond: &(Matrix, Matrix, Matrix)) -> Vec<Film> {
        self.blocks
            .iter()
            .map(|b| {
                let mut scale = b.film_scale.apply(&cond.2);
                scale += 1.0;
                Film {
                    scale,
                    shift: b.film_shift.apply(&cond.2),
                }
            })
            .collect()
    }

    fn trunk(
        &self,
        states: ArrayView2<f64>,
        times: &[f64],
        films: &[Film],
        mut record: Option<(&mut Matrix, &mut Vec<BlockTrace>)>,
    ) -> Matrix {
        let y_in = concat_time(states, times);
        let mut h = self.input_embed.apply(&y_in);
        if let Some((slot, _)) = record.as_mut() {
            **slot = y_in;
        }
        for (block, film) in self.blocks.iter().zip(films) {
            let u = block.main_in.apply(&h);
            let mut z = &u * &film.scale;
            z += &film.shift;
            let a = z.mapv(silu);
            let delta = block.main_out.apply(&a);
            let h_next = &h + &delta;
            if let Some((_, traces)) = record.as_mut() {
                traces.push(BlockTrace { h_in: h, u, z, a });
            }
            h = h_next;
        }
        h
    }

    fn run(
        &self,
        states: ArrayView2<f64>,
        times: &[f64],
        conds: ArrayView2<f64>,
        keep: bool,
    ) -> ForwardTrace {
        let cond = self.conditioning(conds, times);
        let films = self.films(&cond);
        let mut y_in = Matrix::zeros((0, 0));
        let mut blocks = Vec::new();
        let h_out = if keep {
            self.trunk(states, times, &films, Some((&mut y_in, &mut blocks)))
        } else {
            self.trunk(states, times, &films, None)
        };
        let (c_in, c_pre, cond) = cond;
        ForwardTrace {
            y_in,
            c_in,
            c_pre,
            cond,
            films,
            blocks,
            h_out,
        }
    }

    /// Mean squared Euclidean error over the batch and its exact gradient.
    pub fn loss_and_grad(&self, batch: &Batch) -> Result<(f64, NetworkParams)> {
        if batch.is_empty() {
            return Err(Error::invalid("batch must contain at least one item"));
        }
        let times = batch.times.as_slice().expect("contiguous times");
        self.check_batch(batch.states.view(), times, batch.conds.view())?;
        if batch.targets.dim() != batch.states.dim() {
            return Err(Error::invalid("targets must have the same shape as states"));
        }
        let n = batch.len() as f64;
        let trace = self.run(batch.states.view(), times, batch.conds.view(), true);
        let out = self.head.apply(&trace.h_out);
        let residual = &out - &batch.targets;
        let loss = residual.iter().map(|r| r * r).sum::<f64>() / n;

        let mut grad = self.zeros_like();
        let d_out = residual * (2.0 / n);
        grad.head.accumulate_grad(&trace.h_out, &d_out);
        let mut d_h = d_out.dot(&self.head.weight.t());
        let mut d_cond = Matrix::zeros(trace.cond.dim());

        for (i, (block, bt)) in self.blocks.iter().zip(&trace.blocks).enumerate().rev() {
            let film = &trace.films[i];
            let g = &mut grad.blocks[i];
            g.main_out.accumulate_grad(&bt.a, &d_h);
            let d_a = d_h.dot(&block.main_out.weight.t());
            let mut d_z = d_a;
            Zip::from(&mut d_z)
                .and(&bt.z)
                .for_each(|d, &z| *d *= silu_grad(z));
            let d_u = &d_z * &film.scale;
            let d_scale = &d_z * &bt.u;
            g.film_scale.accumulate_grad(&trace.cond, &d_scale);
            g.film_shift.accumulate_grad(&trace.cond, &d_z);
            d_cond += &d_scale.dot(&block.film_scale.weight.t());
            d_cond += &d_z.dot(&block.film_shift.weight.t());
            g.main_in.accumulate_grad(&bt.h_in, &d_u);
            d_h += &d_u.dot(&block.main_in.weight.t());
        }
        grad.input_embed.accumulate_grad(&trace.y_in, &d_h);

        let mut d_c_pre = d_cond;
        Zip::from(&mut d_c_pre)
            .and(&trace.c_pre)
            .for_each(|d, &z| *d *= silu_grad(z));
        grad.cond_embed.accumulate_grad(&trace.c_in, &d_c_pre);

        if !loss.is_finite() {
            return Err(Error::numeric(format!("non-finite loss {loss}")));
        }
        Ok((loss, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_arch() -> Architecture {
        Architecture::new(2, 3, 8, 2).unwrap()
    }

    fn perturbed(seed: u64, arch: Architecture) -> NetworkParams {
        // Non-zero FiLM generators so their gradients are exercised.
        let mut p = NetworkParams::init(seed, arch).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        for t in p.tensors_mut() {
            t.mapv_inplace(|v| v + rng.gen_range(-0.2..0.2));
        }
        p
    }

    fn random_batch(seed: u64, n: usize, arch: Architecture) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items: Vec<_> = (0..n)
            .map(|_| {
                let y = (0..arch.input_dim)
                    .map(|_| rng.gen_range(-1.5..1.5))
                    .collect();
                let x = (0..arch.cond_dim)
                    .map(|_| rng.gen_range(-1.5..1.5))
                    .collect();
                let g = (0..arch.input_dim)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect();
                (y, rng.gen_range(0.0..1.0), x, g)
            })
            .collect();
        Batch::from_items(&items).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = NetworkParams::init(7, small_arch()).unwrap();
        let b = NetworkParams::init(7, small_arch()).unwrap();
        assert_eq!(a, b);
        let c = NetworkParams::init(8, small_arch()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_shapes_follow_architecture() {
        let p = NetworkParams::init(0, Architecture::new(2, 2, 256, 8).unwrap()).unwrap();
        assert_eq!(p.blocks.len(), 8);
        for b in &p.blocks {
            assert_eq!(b.main_in.weight.dim(), (256, 256));
            assert_eq!(b.main_out.weight.dim(), (256, 256));
            assert!(b.film_scale.weight.iter().all(|&v| v == 0.0));
            assert!(b.film_shift.bias.iter().all(|&v| v == 0.0));
        }
        assert_eq!(p.input_embed.weight.dim(), (2 + TIME_FEATURES, 256));
        assert_eq!(p.head.weight.dim(), (256, 2));
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(Architecture::new(0, 1, 1, 1).is_err());
        assert!(Architecture::new(1, 1, 1, 0).is_err());
    }

    #[test]
    fn forward_is_pure_and_shaped() {
        let p = NetworkParams::init(3, small_arch()).unwrap();
        let a = p.forward(&[0.3, -0.2], 0.4, &[1.0, 0.0, -1.0]).unwrap();
        let b = p.forward(&[0.3, -0.2], 0.4, &[1.0, 0.0, -1.0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|v| v.is_finite()));
        assert!(p.forward(&[0.3], 0.4, &[1.0, 0.0, -1.0]).is_err());
        assert!(p.forward(&[0.3, 0.1], 0.4, &[1.0]).is_err());
    }

    #[test]
    fn shared_forward_matches_batched() {
        let p = perturbed(4, small_arch());
        let states = ndarray::array![[0.1, 0.2], [-1.0, 0.5], [0.7, -0.3]];
        let x = [0.5, -0.5, 0.25];
        let shared = p.forward_shared(states.view(), 0.3, &x).unwrap();
        let conds = Matrix::from_shape_fn((3, 3), |(_, j)| x[j]);
        let batched = p
            .forward_batch(states.view(), &[0.3; 3], conds.view())
            .unwrap();
        for (a, b) in shared.iter().zip(batched.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn film_neutral_when_generators_zero() {
        // Fresh init has zero FiLM weights: output must not depend on x.
        let p = NetworkParams::init(5, small_arch()).unwrap();
        let mut q = p.clone();
        q.cond_embed.weight.mapv_inplace(|v| v * 3.0 + 1.0);
        let a = p.forward(&[0.2, 0.1], 0.5, &[1.0, 2.0, 3.0]).unwrap();
        let b = q.forward(&[0.2, 0.1], 0.5, &[-4.0, 0.0, 9.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_loss_at_exact_targets() {
        let p = perturbed(6, small_arch());
        let mut batch = random_batch(1, 5, small_arch());
        let times = batch.times.to_vec();
        batch.targets = p
            .forward_batch(batch.states.view(), &times, batch.conds.view())
            .unwrap();
        let (loss, grad) = p.loss_and_grad(&batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn single_item_loss_is_squared_norm() {
        let p = perturbed(2, small_arch());
        let y = vec![0.1, 0.2];
        let x = vec![0.0, 1.0, 2.0];
        let o = p.forward(&y, 0.7, &x).unwrap();
        let g = vec![1.0, -1.0];
        let batch = Batch::from_items(&[(y, 0.7, x, g.clone())]).unwrap();
        let (loss, _) = p.loss_and_grad(&batch).unwrap();
        let expect: f64 = o.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum();
        assert!((loss - expect).abs() < 1e-14);
    }

    #[test]
    fn empty_batch_rejected() {
        assert!(Batch::from_items(&[]).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let arch = small_arch();
        let p = perturbed(11, arch);
        let batch = random_batch(12, 6, arch);
        let (_, grad) = p.loss_and_grad(&batch).unwrap();
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n_tensors = p.tensors().len();
        for _ in 0..100 {
            let ti = rng.gen_range(0..n_tensors);
            let len = p.tensors()[ti].len();
            let k = rng.gen_range(0..len);
            let eval = |delta: f64| {
                let mut q = p.clone();
                let t = &mut q.tensors_mut()[ti];
                t.as_slice_mut().unwrap()[k] += delta;
                q.loss_and_grad(&batch).unwrap().0
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = grad.tensors()[ti].as_slice().unwrap()[k];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(rel < 1e-4, "tensor {ti} entry {k}: fd {fd} analytic {an}");
        }
    }
}
