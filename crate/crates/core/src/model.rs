//! Fully connected ReLU network with a single sigmoid output, plus its
//! hand-written backward pass.
//!
//! All trainable weights live in one flat [`ParamVector`] with a fixed
//! layout: for each layer in order, the `fan_in x fan_out` weight block in
//! row-major order followed by the `fan_out` biases. The forward pass for a
//! batch `X` (one sample per row) is `Z = X·W + b`.

use alloc::format;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, sigmoid_grad_from_output, Matrix, Vector};

pub const DEFAULT_HIDDEN: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
}

/// Location of one layer inside a [`ParamVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerSlot {
    fn end(&self) -> usize {
        self.bias_offset + self.fan_out
    }
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>) -> Result<Self> {
        if input_dim == 0 {
            return Err(crate::error::param("input_dim", "must be at least 1"));
        }
        if hidden_dims.contains(&0) {
            return Err(crate::error::param(
                "hidden_dims",
                "every layer needs at least one unit",
            ));
        }
        Ok(MlpArchitecture { input_dim, hidden_dims })
    }

    /// Single hidden layer of [`DEFAULT_HIDDEN`] units.
    pub fn with_default_hidden(input_dim: usize) -> Result<Self> {
        Self::new(input_dim, alloc::vec![DEFAULT_HIDDEN])
    }

    /// Layer widths from input to the single output unit.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(1);
        dims
    }

    /// Rebuilds an architecture from [`dims`](Self::dims) output.
    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        match dims {
            [input, hidden @ .., 1] if dims.len() >= 2 => Self::new(*input, hidden.to_vec()),
            _ => Err(Error::Shape(format!(
                "layer dims {dims:?} must start with the input width and end with 1"
            ))),
        }
    }

    pub fn layers(&self) -> Vec<LayerSlot> {
        let dims = self.dims();
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let slot = LayerSlot {
                    fan_in: w[0],
                    fan_out: w[1],
                    weight_offset: offset,
                    bias_offset: offset + w[0] * w[1],
                };
                offset = slot.end();
                slot
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn check_params(&self, theta: &ParamVector) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, architecture needs {}",
                theta.len(),
                self.param_count()
            )));
        }
        Ok(())
    }
}

/// Flat vector of every trainable weight of one network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(alloc::vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `self += c · other`.
    pub fn axpy(&mut self, c: f64, other: &ParamVector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += c * b;
        }
    }

    pub fn scaled(&self, c: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|v| c * v).collect())
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Splits into per-layer `(weights, biases)` matrices; the biases are a `1 x fan_out` row.
    pub fn unpack(&self, arch: &MlpArchitecture) -> Result<Vec<(Matrix, Matrix)>> {
        arch.check_params(self)?;
        arch.layers()
            .iter()
            .map(|s| {
                let w = self.0[s.weight_offset..s.bias_offset].to_vec();
                let b = self.0[s.bias_offset..s.end()].to_vec();
                Ok((
                    Matrix::from_vec(s.fan_in, s.fan_out, w)?,
                    Matrix::from_vec(1, s.fan_out, b)?,
                ))
            })
            .collect()
    }

    /// Inverse of [`unpack`](Self::unpack).
    pub fn pack(arch: &MlpArchitecture, layers: &[(Matrix, Matrix)]) -> Result<Self> {
        let slots = arch.layers();
        if slots.len() != layers.len() {
            return Err(Error::Shape(format!(
                "{} layer blocks for a {}-layer architecture",
                layers.len(),
                slots.len()
            )));
        }
        let mut out = Vec::with_capacity(arch.param_count());
        for (slot, (w, b)) in slots.iter().zip(layers) {
            if w.shape() != (slot.fan_in, slot.fan_out) || b.shape() != (1, slot.fan_out) {
                return Err(Error::Shape(format!(
                    "layer block {:?}/{:?} does not fit {}x{}",
                    w.shape(),
                    b.shape(),
                    slot.fan_in,
                    slot.fan_out
                )));
            }
            out.extend_from_slice(w.values());
            out.extend_from_slice(b.values());
        }
        Ok(ParamVector(out))
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        ParamVector(values)
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Xavier-uniform weights (`±sqrt(6 / (fan_in + fan_out))`) and zero biases.
pub fn init_params(arch: &MlpArchitecture, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = ParamVector::zeros(arch.param_count());
    for slot in arch.layers() {
        let bound = libm::sqrt(6.0 / (slot.fan_in + slot.fan_out) as f64);
        for w in &mut theta[slot.weight_offset..slot.bias_offset] {
            *w = rng.gen_range(-bound..=bound);
        }
    }
    theta
}

/// Intermediate values of one forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Layer inputs: `inputs[0]` is the batch, `inputs[l]` is the ReLU output feeding layer `l`.
    inputs: Vec<Matrix>,
    /// Pre-activations of every hidden layer.
    hidden_pre: Vec<Matrix>,
    output: Vector,
}

impl ForwardCache {
    pub fn output(&self) -> &Vector {
        &self.output
    }

    pub fn batch_size(&self) -> usize {
        self.output.len()
    }

    /// Pre-activations of each hidden layer, `batch × width`.
    pub fn hidden_pre(&self) -> &[Matrix] {
        &self.hidden_pre
    }
}

pub fn forward(arch: &MlpArchitecture, theta: &ParamVector, x: &Matrix) -> Result<(Vector, ForwardCache)> {
    arch.check_params(theta)?;
    if x.cols() != arch.input_dim {
        return Err(Error::Shape(format!(
            "batch has {} features, architecture expects {}",
            x.cols(),
            arch.input_dim
        )));
    }
    let slots = arch.layers();
    let last = slots.len() - 1;
    let mut inputs = Vec::with_capacity(slots.len());
    let mut hidden_pre = Vec::with_capacity(last);
    let mut current = x.clone();
    for (l, slot) in slots.iter().enumerate() {
        let w = Matrix::from_vec(
            slot.fan_in,
            slot.fan_out,
            theta[slot.weight_offset..slot.bias_offset].to_vec(),
        )?;
        let mut z = current.matmul(&w)?;
        z.add_row_vector(&theta[slot.bias_offset..slot.end()])?;
        inputs.push(current);
        if l == last {
            current = z;
        } else {
            current = z.relu();
            hidden_pre.push(z);
        }
    }
    let yhat: Vector = current
        .into_values()
        .into_iter()
        .map(sigmoid)
        .collect::<Vec<_>>()
        .into();
    let cache = ForwardCache {
        inputs,
        hidden_pre,
        output: yhat.clone(),
    };
    Ok((yhat, cache))
}

/// Gradient of a scalar loss with respect to every parameter, given the
/// per-sample derivative of that loss with respect to the network output.
pub fn backward(
    arch: &MlpArchitecture,
    theta: &ParamVector,
    cache: &ForwardCache,
    dl_dyhat: &[f64],
) -> Result<ParamVector> {
    arch.check_params(theta)?;
    let slots = arch.layers();
    if cache.inputs.len() != slots.len() || cache.hidden_pre.len() + 1 != slots.len() {
        return Err(Error::Shape("forward cache does not match architecture".into()));
    }
    let b = cache.batch_size();
    if dl_dyhat.len() != b {
        return Err(Error::Shape(format!(
            "output gradient has {} entries for a batch of {b}",
            dl_dyhat.len()
        )));
    }
    let mut grad = ParamVector::zeros(arch.param_count());
    let delta_out: Vec<f64> = dl_dyhat
        .iter()
        .zip(cache.output.iter())
        .map(|(g, &y)| g * sigmoid_grad_from_output(y))
        .collect();
    let mut delta = Matrix::from_vec(b, 1, delta_out)?;
    for (l, slot) in slots.iter().enumerate().rev() {
        let gw = cache.inputs[l].t_matmul(&delta)?;
        grad[slot.weight_offset..slot.bias_offset].copy_from_slice(gw.values());
        grad[slot.bias_offset..slot.end()].copy_from_slice(&delta.column_sums());
        if l > 0 {
            let w = Matrix::from_vec(
                slot.fan_in,
                slot.fan_out,
                theta[slot.weight_offset..slot.bias_offset].to_vec(),
            )?;
            let upstream = delta.matmul_t(&w)?;
            delta = upstream.mul(&cache.hidden_pre[l - 1].relu_grad())?;
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use proptest::prelude::{prop_assert, proptest};
    use rand::Rng;

    fn toy_data(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    /// Scalar test loss `Σ c_i ŷ_i`, so `dL/dŷ = c`.
    fn weighted_output(arch: &MlpArchitecture, theta: &ParamVector, x: &Matrix, c: &[f64]) -> f64 {
        let (y, _) = forward(arch, theta, x).unwrap();
        y.iter().zip(c).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn param_count_and_layout() {
        let arch = MlpArchitecture::new(4, vec![256]).unwrap();
        assert_eq!(arch.param_count(), 4 * 256 + 256 + 256 + 1);
        let slots = arch.layers();
        assert_eq!(slots[1].weight_offset, 4 * 256 + 256);
        assert_eq!(MlpArchitecture::from_dims(&arch.dims()).unwrap(), arch);
        assert!(MlpArchitecture::from_dims(&[4, 3]).is_err());
    }

    #[test]
    fn init_is_bounded_deterministic_with_zero_bias() {
        let arch = MlpArchitecture::new(4, vec![256]).unwrap();
        let theta = init_params(&arch, 11);
        assert_eq!(theta, init_params(&arch, 11));
        assert_ne!(theta, init_params(&arch, 12));
        let s = arch.layers()[0];
        let bound = (6.0f64 / 260.0).sqrt();
        assert!(theta[s.weight_offset..s.bias_offset].iter().all(|w| w.abs() <= bound));
        for slot in arch.layers() {
            assert!(theta[slot.bias_offset..slot.bias_offset + slot.fan_out]
                .iter()
                .all(|&b| b == 0.0));
        }
    }

    #[test]
    fn pack_unpack_roundtrip() {
        let arch = MlpArchitecture::new(3, vec![5, 2]).unwrap();
        let theta = init_params(&arch, 1);
        let layers = theta.unpack(&arch).unwrap();
        assert_eq!(ParamVector::pack(&arch, &layers).unwrap(), theta);
    }

    #[test]
    fn zero_params_give_half() {
        let arch = MlpArchitecture::new(3, vec![4]).unwrap();
        let (y, _) = forward(&arch, &ParamVector::zeros(arch.param_count()), &toy_data(5, 3, 0)).unwrap();
        assert!(y.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn hand_computed_single_hidden_unit() {
        // x = (1, 2); hidden z = 0.5·1 − 0.25·2 + 0.1 = 0.1, relu = 0.1;
        // output logit = 2·0.1 − 0.3 = −0.1; ŷ = 1/(1+e^{0.1}) = 0.47502081252106.
        let arch = MlpArchitecture::new(2, vec![1]).unwrap();
        let theta = ParamVector::from(vec![0.5, -0.25, 0.1, 2.0, -0.3]);
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let (y, _) = forward(&arch, &theta, &x).unwrap();
        assert!((y[0] - 0.475_020_812_521_06).abs() < 1e-13);

        // Negative hidden pre-activation is clipped: z = 0.5·(−1) − 0.25·2 + 0.1 = −0.9.
        let x = Matrix::from_rows(&[vec![-1.0, 2.0]]).unwrap();
        let (y, _) = forward(&arch, &theta, &x).unwrap();
        assert!((y[0] - sigmoid(-0.3)).abs() < 1e-15);
    }

    #[test]
    fn identical_rows_identical_outputs_and_pure() {
        let arch = MlpArchitecture::new(3, vec![7]).unwrap();
        let theta = init_params(&arch, 5);
        let x = Matrix::from_rows(&vec![vec![0.3, -1.0, 2.0]; 4]).unwrap();
        let (y, _) = forward(&arch, &theta, &x).unwrap();
        assert!(y.iter().all(|&v| v == y[0]));
        let (y2, _) = forward(&arch, &theta, &x).unwrap();
        assert_eq!(y, y2);
    }

    #[test]
    fn shape_errors() {
        let arch = MlpArchitecture::new(3, vec![4]).unwrap();
        let theta = init_params(&arch, 0);
        assert!(matches!(
            forward(&arch, &theta, &Matrix::zeros(2, 4)),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            forward(&arch, &ParamVector::zeros(3), &Matrix::zeros(2, 3)),
            Err(Error::Shape(_))
        ));
        let (_, cache) = forward(&arch, &theta, &Matrix::zeros(2, 3)).unwrap();
        assert!(matches!(backward(&arch, &theta, &cache, &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let arch = MlpArchitecture::new(3, vec![4, 3]).unwrap();
        let theta = init_params(&arch, 2);
        let x = toy_data(6, 3, 9);
        let (_, cache) = forward(&arch, &theta, &x).unwrap();
        let g = backward(&arch, &theta, &cache, &[0.0; 6]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    fn fd_check(arch: &MlpArchitecture, seed: u64) {
        let mut theta = init_params(arch, seed);
        // Non-zero biases so the check also covers them.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for v in theta.iter_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
        let b = 7;
        let x = toy_data(b, arch.input_dim, seed + 1);
        let c: Vec<f64> = (0..b).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cache) = forward(arch, &theta, &x).unwrap();
        let g = backward(arch, &theta, &cache, &c).unwrap();
        let h = 1e-5;
        for k in 0..theta.len() {
            let mut plus = theta.clone();
            plus[k] += h;
            let mut minus = theta.clone();
            minus[k] -= h;
            let fd = (weighted_output(arch, &plus, &x, &c) - weighted_output(arch, &minus, &x, &c)) / (2.0 * h);
            let tol = (1e-4 * fd.abs().max(g[k].abs())).max(1e-7);
            assert!((fd - g[k]).abs() <= tol, "coord {k}: fd {fd} analytic {}", g[k]);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        fd_check(&MlpArchitecture::new(3, vec![5]).unwrap(), 1);
        fd_check(&MlpArchitecture::new(2, vec![4, 3]).unwrap(), 2);
        fd_check(&MlpArchitecture::new(4, vec![]).unwrap(), 3);
    }

    proptest! {
        #[test]
        fn backward_is_linear_in_upstream(seed in any::<u64>(), a in -3.0f64..3.0) {
            let arch = MlpArchitecture::new(3, vec![6]).unwrap();
            let theta = init_params(&arch, seed);
            let x = toy_data(5, 3, seed.wrapping_add(1));
            let (_, cache) = forward(&arch, &theta, &x).unwrap();
            let up = [0.3, -0.2, 0.9, 0.1, -0.7];
            let scaled: Vec<f64> = up.iter().map(|v| a * v).collect();
            let g1 = backward(&arch, &theta, &cache, &up).unwrap();
            let g2 = backward(&arch, &theta, &cache, &scaled).unwrap();
            for (p, q) in g1.iter().zip(g2.iter()) {
                prop_assert!((a * p - q).abs() <= 1e-12 * (1.0 + q.abs()));
            }
        }
    }
}
