//! Fully connected cost predictor `d -> w(d)` with hand-written forward and
//! backward passes.
//!
//! Hidden layers use leaky-ReLU; the output layer is affine. Dropout, when
//! enabled, is applied to the output vector in training mode only, using the
//! inverted convention (kept entries are scaled by `1 / (1 - p)`), so
//! evaluation needs no rescaling.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    /// `[context_dim, hidden..., output_dim]`.
    pub layer_dims: Vec<usize>,
    pub leaky_slope: f64,
    /// Output dropout probability in `[0, 1)`.
    pub dropout_rate: f64,
    pub seed: u64,
}

impl MlpConfig {
    pub fn new(layer_dims: Vec<usize>) -> Self {
        Self {
            layer_dims,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            dropout_rate: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "an MLP needs at least an input and an output dimension".into(),
            ));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "layer dimensions must be positive: {:?}",
                self.layer_dims
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::InvalidConfig("leaky slope must be finite".into()));
        }
        Ok(())
    }
}

/// One affine layer, `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: DMatrix::zeros(out_dim, in_dim),
            bias: DVector::zeros(out_dim),
        }
    }
}

/// Trainable weights plus the fixed activation/dropout settings needed to run them.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub leaky_slope: f64,
    pub dropout_rate: f64,
}

/// Gradients with the same shapes as [`MlpParams::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub layers: Vec<Layer>,
}

/// Intermediate values recorded by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<DVector<f64>>,
    /// Pre-activations of the hidden layers.
    pre_activations: Vec<DVector<f64>>,
    dropout_mask: Option<DVector<f64>>,
}

impl ForwardCache {
    pub fn dropout_mask(&self) -> Option<&DVector<f64>> {
        self.dropout_mask.as_ref()
    }
}

/// Glorot-uniform weights, zero biases; deterministic in `config.seed`.
pub fn init_params(config: &MlpConfig) -> Result<MlpParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let layers = config
        .layer_dims
        .windows(2)
        .map(|pair| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut layer = Layer::zeros(fan_out, fan_in);
            for v in layer.weight.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
            layer
        })
        .collect();
    Ok(MlpParams {
        layers,
        leaky_slope: config.leaky_slope,
        dropout_rate: config.dropout_rate,
    })
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weight.nrows()).unwrap_or(0)
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.weight.nrows()));
        dims
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Mutable views over every parameter, in a fixed order matching
    /// [`MlpGradients::slices`].
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn zero_gradients(&self) -> MlpGradients {
        MlpGradients {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.weight.nrows(), l.weight.ncols()))
                .collect(),
        }
    }

    /// Writes the text checkpoint format documented in the README.
    pub fn to_checkpoint_string(&self) -> String {
        let mut out = String::new();
        writeln!(out, "dysnet-mlp 1").unwrap();
        writeln!(out, "leaky_slope {}", self.leaky_slope).unwrap();
        writeln!(out, "dropout_rate {}", self.dropout_rate).unwrap();
        writeln!(out, "layers {}", self.layers.len()).unwrap();
        for layer in &self.layers {
            let (rows, cols) = layer.weight.shape();
            writeln!(out, "layer {rows} {cols}").unwrap();
            for r in 0..rows {
                let row: Vec<String> = layer.weight.row(r).iter().map(|v| v.to_string()).collect();
                writeln!(out, "{}", row.join(" ")).unwrap();
            }
            let bias: Vec<String> = layer.bias.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", bias.join(" ")).unwrap();
        }
        out
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Parse(format!("checkpoint ended early, expected {what}")))
        };
        if next("header")?.trim() != "dysnet-mlp 1" {
            return Err(Error::Parse("not a dysnet-mlp version 1 checkpoint".into()));
        }
        let leaky_slope = keyed_value(next("leaky_slope")?, "leaky_slope")?;
        let dropout_rate = keyed_value(next("dropout_rate")?, "dropout_rate")?;
        let count: usize = keyed_value(next("layers")?, "layers")?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let shape = next("layer shape")?;
            let parts: Vec<&str> = shape.split_whitespace().collect();
            if parts.len() != 3 || parts[0] != "layer" {
                return Err(Error::Parse(format!("bad layer header {shape:?}")));
            }
            let rows: usize = parse_num(parts[1])?;
            let cols: usize = parse_num(parts[2])?;
            let mut weight = DMatrix::zeros(rows, cols);
            for r in 0..rows {
                let row = parse_row(next("weight row")?, cols)?;
                for (c, v) in row.into_iter().enumerate() {
                    weight[(r, c)] = v;
                }
            }
            let bias = DVector::from_vec(parse_row(next("bias")?, rows)?);
            layers.push(Layer { weight, bias });
        }
        for pair in layers.windows(2) {
            if pair[0].weight.nrows() != pair[1].weight.ncols() {
                return Err(Error::ShapeMismatch(
                    "consecutive checkpoint layers do not chain".into(),
                ));
            }
        }
        if layers.is_empty() {
            return Err(Error::Parse("checkpoint has no layers".into()));
        }
        Ok(Self {
            layers,
            leaky_slope,
            dropout_rate,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint_str(&std::fs::read_to_string(path)?)
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("cannot parse number {s:?}")))
}

fn keyed_value<T: std::str::FromStr>(line: &str, key: &str) -> Result<T> {
    match line.split_once(' ') {
        Some((k, v)) if k == key => parse_num(v),
        _ => Err(Error::Parse(format!("expected `{key} <value>`, found {line:?}"))),
    }
}

fn parse_row(line: &str, expected: usize) -> Result<Vec<f64>> {
    let row = line.split_whitespace().map(parse_num).collect::<Result<Vec<f64>>>()?;
    if row.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint row has {} values, expected {expected}",
            row.len()
        )));
    }
    Ok(row)
}

impl MlpGradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn add_assign(&mut self, other: &MlpGradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.norm_squared() + l.bias.norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}

fn leaky(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

/// Maps a context vector to a cost vector. Dropout is sampled from `rng`
/// only when `train_mode` is set and the dropout rate is positive.
pub fn forward<R: Rng + ?Sized>(
    params: &MlpParams,
    d: &DVector<f64>,
    train_mode: bool,
    rng: &mut R,
) -> Result<(DVector<f64>, ForwardCache)> {
    check_len("predictor input", params.input_dim(), d.len())?;
    let last = params.layers.len() - 1;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pre_activations = Vec::with_capacity(last);
    let mut a = d.clone();
    for (i, layer) in params.layers.iter().enumerate() {
        let mut pre = layer.bias.clone();
        pre.gemv(1.0, &layer.weight, &a, 1.0);
        inputs.push(a);
        if i == last {
            a = pre;
        } else {
            a = pre.map(|v| leaky(v, params.leaky_slope));
            pre_activations.push(pre);
        }
    }

    let p = params.dropout_rate;
    let dropout_mask = if train_mode && p > 0.0 {
        let keep = 1.0 / (1.0 - p);
        let mask = DVector::from_fn(a.len(), |_, _| if rng.random::<f64>() < p { 0.0 } else { keep });
        a.component_mul_assign(&mask);
        Some(mask)
    } else {
        None
    };

    Ok((
        a,
        ForwardCache {
            inputs,
            pre_activations,
            dropout_mask,
        },
    ))
}

/// Backpropagates `grad_w = dl/dw` through the network recorded in `cache`.
pub fn backward(params: &MlpParams, cache: &ForwardCache, grad_w: &DVector<f64>) -> Result<MlpGradients> {
    if cache.inputs.len() != params.layers.len() {
        return Err(Error::ShapeMismatch(
            "forward cache does not match the parameter layers".into(),
        ));
    }
    if grad_w.len() != params.output_dim() {
        return Err(Error::ShapeMismatch(format!(
            "output gradient has length {}, network output is {}",
            grad_w.len(),
            params.output_dim()
        )));
    }
    let mut g = match &cache.dropout_mask {
        Some(mask) => grad_w.component_mul(mask),
        None => grad_w.clone(),
    };
    let mut grads = Vec::with_capacity(params.layers.len());
    for i in (0..params.layers.len()).rev() {
        let layer = &params.layers[i];
        let input = &cache.inputs[i];
        grads.push(Layer {
            weight: &g * input.transpose(),
            bias: g.clone(),
        });
        if i > 0 {
            let mut back = layer.weight.tr_mul(&g);
            let pre = &cache.pre_activations[i - 1];
            for (b, &z) in back.iter_mut().zip(pre.iter()) {
                if z <= 0.0 {
                    *b *= params.leaky_slope;
                }
            }
            g = back;
        }
    }
    grads.reverse();
    Ok(MlpGradients { layers: grads })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(99)
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = MlpConfig {
            seed: 5,
            ..MlpConfig::new(vec![5, 10, 40])
        };
        assert_eq!(init_params(&cfg).unwrap(), init_params(&cfg).unwrap());
        let other = MlpConfig { seed: 6, ..cfg.clone() };
        assert_ne!(init_params(&cfg).unwrap(), init_params(&other).unwrap());
    }

    #[test]
    fn parameter_counts() {
        let single = init_params(&MlpConfig::new(vec![5, 40])).unwrap();
        assert_eq!(single.num_params(), 240);
        // one hidden layer of width 10 reproduces the tabulated sizes
        for (n, expected) in [(40, 500), (180, 2040), (760, 8420), (1740, 19200)] {
            let p = init_params(&MlpConfig::new(vec![5, 10, n])).unwrap();
            assert_eq!(p.num_params(), expected);
        }
    }

    #[test]
    fn init_bounds_and_zero_bias() {
        let p = init_params(&MlpConfig::new(vec![5, 10, 40])).unwrap();
        let lim = (6.0f64 / 15.0).sqrt();
        assert!(p.layers[0].weight.iter().all(|v| v.abs() <= lim));
        assert!(p.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn invalid_configs() {
        assert!(init_params(&MlpConfig::new(vec![5])).is_err());
        assert!(init_params(&MlpConfig::new(vec![5, 0, 3])).is_err());
        let cfg = MlpConfig {
            dropout_rate: 1.0,
            ..MlpConfig::new(vec![5, 3])
        };
        assert!(init_params(&cfg).is_err());
    }

    #[test]
    fn single_layer_is_affine_in_unit_vector() {
        let mut p = init_params(&MlpConfig::new(vec![3, 2])).unwrap();
        p.layers[0].bias = DVector::from_vec(vec![0.5, -1.0]);
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let (w, _) = forward(&p, &e1, false, &mut rng()).unwrap();
        let expected = p.layers[0].weight.column(0) + &p.layers[0].bias;
        assert!((w - expected).norm() < 1e-15);
    }

    #[test]
    fn no_dropout_means_train_equals_eval() {
        let p = init_params(&MlpConfig::new(vec![5, 10, 8])).unwrap();
        let d = DVector::from_vec(vec![0.1, -0.4, 1.0, 2.0, -0.3]);
        let (a, _) = forward(&p, &d, true, &mut rng()).unwrap();
        let (b, _) = forward(&p, &d, false, &mut rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unit_slope_makes_network_affine() {
        let cfg = MlpConfig {
            leaky_slope: 1.0,
            ..MlpConfig::new(vec![3, 6, 4])
        };
        let p = init_params(&cfg).unwrap();
        let eval = |d: &DVector<f64>| forward(&p, d, false, &mut rng()).unwrap().0;
        let x = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let y = DVector::from_vec(vec![-0.7, 0.5, 0.1]);
        let zero = eval(&DVector::zeros(3));
        let lhs = eval(&(&x * 2.0 + &y * 3.0)) - &zero;
        let rhs = (eval(&x) - &zero) * 2.0 + (eval(&y) - &zero) * 3.0;
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn wrong_input_length() {
        let p = init_params(&MlpConfig::new(vec![5, 3])).unwrap();
        assert!(forward(&p, &DVector::zeros(4), false, &mut rng()).is_err());
    }

    #[test]
    fn backward_zero_and_linearity() {
        let p = init_params(&MlpConfig::new(vec![2, 3, 2])).unwrap();
        let d = DVector::from_vec(vec![0.4, -0.9]);
        let (_, cache) = forward(&p, &d, false, &mut rng()).unwrap();
        let g0 = backward(&p, &cache, &DVector::zeros(2)).unwrap();
        assert_eq!(g0.norm(), 0.0);
        let v = DVector::from_vec(vec![0.3, -1.2]);
        let g1 = backward(&p, &cache, &v).unwrap();
        let mut g2 = backward(&p, &cache, &(&v * 2.0)).unwrap();
        g2.scale(0.5);
        for (a, b) in g1.slices().iter().zip(g2.slices()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-15);
            }
        }
        assert!(backward(&p, &cache, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut p = init_params(&MlpConfig {
            seed: 3,
            ..MlpConfig::new(vec![2, 3, 2])
        })
        .unwrap();
        for l in &mut p.layers {
            l.bias
                .iter_mut()
                .enumerate()
                .for_each(|(i, b)| *b = 0.1 * i as f64 - 0.05);
        }
        let d = DVector::from_vec(vec![0.7, -0.2]);
        let probe = DVector::from_vec(vec![1.3, -0.6]);
        let (_, cache) = forward(&p, &d, false, &mut rng()).unwrap();
        let grads = backward(&p, &cache, &probe).unwrap();
        let analytic: Vec<f64> = grads.slices().concat();

        let h = 1e-6;
        let scalar = |q: &MlpParams| forward(q, &d, false, &mut rng()).unwrap().0.dot(&probe);
        let mut idx = 0;
        let total = p.num_params();
        while idx < total {
            let mut up = p.clone();
            let mut dn = p.clone();
            nth_param(&mut up, idx, h);
            nth_param(&mut dn, idx, -h);
            let fd = (scalar(&up) - scalar(&dn)) / (2.0 * h);
            assert!(
                (fd - analytic[idx]).abs() < 1e-6,
                "param {idx}: fd {fd} vs {}",
                analytic[idx]
            );
            idx += 1;
        }
    }

    fn nth_param(p: &mut MlpParams, mut idx: usize, delta: f64) {
        for s in p.slices_mut() {
            if idx < s.len() {
                s[idx] += delta;
                return;
            }
            idx -= s.len();
        }
    }

    #[test]
    fn dropout_masks_are_inverted() {
        let cfg = MlpConfig {
            dropout_rate: 0.25,
            ..MlpConfig::new(vec![3, 50])
        };
        let p = init_params(&cfg).unwrap();
        let (_, cache) = forward(&p, &DVector::from_vec(vec![1.0, 2.0, 3.0]), true, &mut rng()).unwrap();
        let mask = cache.dropout_mask().unwrap();
        assert!(mask.iter().all(|&m| m == 0.0 || (m - 4.0 / 3.0).abs() < 1e-15));
        assert!(mask.iter().any(|&m| m == 0.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = MlpConfig {
            dropout_rate: 0.1,
            leaky_slope: 0.02,
            seed: 11,
            ..MlpConfig::new(vec![5, 4, 3])
        };
        let p = init_params(&cfg).unwrap();
        let text = p.to_checkpoint_string();
        assert_eq!(MlpParams::from_checkpoint_str(&text).unwrap(), p);
        assert!(MlpParams::from_checkpoint_str("garbage").is_err());
        let truncated: String = text.lines().take(6).collect::<Vec<_>>().join("\n");
        assert!(MlpParams::from_checkpoint_str(&truncated).is_err());
    }
}
