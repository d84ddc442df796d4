//! Black-box models: shape detectors, linear models and a small tanh MLP.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// A model `f: [0,1]^D -> R` to be explained.
pub trait BlackBoxModel: Send + Sync {
    fn evaluate(&self, x: &Image) -> Result<f64>;

    /// Gradient with respect to every pixel value, laid out like `x.pixels()`.
    fn gradient(&self, _x: &Image) -> Result<Vec<f64>> {
        Err(Error::GradientUnavailable)
    }

    fn has_gradient(&self) -> bool {
        false
    }

    /// A constant `M` with `|f| <= M` on `[0,1]^D`, when known.
    fn bound(&self) -> Option<f64> {
        None
    }
}

/// `f(x) = value` everywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantModel {
    pub value: f64,
}

impl BlackBoxModel for ConstantModel {
    fn evaluate(&self, _x: &Image) -> Result<f64> {
        Ok(self.value)
    }

    fn gradient(&self, x: &Image) -> Result<Vec<f64>> {
        Ok(vec![0.0; x.pixels().len()])
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn bound(&self) -> Option<f64> {
        Some(self.value.abs())
    }
}

/// Fires (returns 1) iff every shape pixel is strictly brighter than `tau`.
/// Grayscale images only.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeDetector {
    pixels: Vec<usize>,
    tau: f64,
}

impl ShapeDetector {
    pub fn new(mut pixels: Vec<usize>, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "shape threshold must lie in (0, 1), got {tau}"
            )));
        }
        let before = pixels.len();
        pixels.sort_unstable();
        pixels.dedup();
        if pixels.len() != before {
            return Err(Error::InvalidParameter("shape pixels must be distinct".into()));
        }
        Ok(Self { pixels, tau })
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub(crate) fn check_image(&self, x: &Image) -> Result<()> {
        if x.channels() != 1 {
            return Err(Error::InvalidParameter(
                "shape detectors only accept single-channel images".into(),
            ));
        }
        if let Some(&u) = self.pixels.iter().find(|&&u| u >= x.num_pixels()) {
            return Err(Error::DimensionMismatch(format!(
                "shape pixel {u} outside image of {} pixels",
                x.num_pixels()
            )));
        }
        Ok(())
    }
}

impl BlackBoxModel for ShapeDetector {
    fn evaluate(&self, x: &Image) -> Result<f64> {
        self.check_image(x)?;
        let px = x.pixels();
        Ok(if self.pixels.iter().all(|&u| px[u] > self.tau) {
            1.0
        } else {
            0.0
        })
    }

    /// Zero almost everywhere.
    fn gradient(&self, x: &Image) -> Result<Vec<f64>> {
        self.check_image(x)?;
        Ok(vec![0.0; x.pixels().len()])
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn bound(&self) -> Option<f64> {
        Some(1.0)
    }
}

/// `f(x) = sum_u coefficients[u] * x[u]` over all pixel values.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    coefficients: Vec<f64>,
}

impl LinearModel {
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("linear coefficients must be finite".into()));
        }
        Ok(Self { coefficients })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    fn check(&self, x: &Image) -> Result<()> {
        if x.pixels().len() == self.coefficients.len() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "linear model has {} coefficients, image has {} values",
                self.coefficients.len(),
                x.pixels().len()
            )))
        }
    }
}

impl BlackBoxModel for LinearModel {
    fn evaluate(&self, x: &Image) -> Result<f64> {
        self.check(x)?;
        Ok(self.coefficients.iter().zip(x.pixels()).map(|(l, v)| l * v).sum())
    }

    fn gradient(&self, x: &Image) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(self.coefficients.clone())
    }

    fn has_gradient(&self) -> bool {
        true
    }

    fn bound(&self) -> Option<f64> {
        // Inputs live in [0, 1]: the extremes are the positive and negative parts.
        let pos: f64 = self.coefficients.iter().filter(|c| **c > 0.0).sum();
        let neg: f64 = self.coefficients.iter().filter(|c| **c < 0.0).sum();
        Some(pos.max(-neg))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer; `weights[o][i]` maps input `i` to output `o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    fn inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    fn outputs(&self) -> usize {
        self.weights.len()
    }

    fn pre_activation(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }
}

/// Multilayer perceptron with a scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidParameter("MLP needs at least one layer".into()))?;
        if first.inputs() == 0 {
            return Err(Error::InvalidParameter("MLP input dimension is zero".into()));
        }
        let mut width = first.inputs();
        for (k, layer) in layers.iter().enumerate() {
            if layer.weights.iter().any(|r| r.len() != width) || layer.bias.len() != layer.outputs() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {k} weights/bias do not match input width {width}"
                )));
            }
            if layer
                .weights
                .iter()
                .flatten()
                .chain(&layer.bias)
                .any(|v| !v.is_finite())
            {
                return Err(Error::InvalidParameter(format!("layer {k} has non-finite parameters")));
            }
            width = layer.outputs();
        }
        if width != 1 {
            return Err(Error::DimensionMismatch(format!(
                "MLP output must be scalar, last layer has {width} outputs"
            )));
        }
        Ok(Self { layers })
    }

    /// Seeded initialization: weights and biases uniform in `±scale / sqrt(fan_in)`,
    /// tanh on hidden layers and identity on the output.
    pub fn random(sizes: &[usize], seed: u64, scale: f64) -> Result<Self> {
        if sizes.len() < 2 || *sizes.last().unwrap() != 1 {
            return Err(Error::InvalidParameter(format!(
                "MLP sizes must end in 1 and have at least two entries, got {sizes:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let limit = scale / (w[0] as f64).sqrt();
                let weights = (0..w[1])
                    .map(|_| (0..w[0]).map(|_| rng.gen_range(-limit..=limit)).collect())
                    .collect();
                let bias = (0..w[1]).map(|_| rng.gen_range(-limit..=limit)).collect();
                let activation = if k == last {
                    Activation::Identity
                } else {
                    Activation::Tanh
                };
                DenseLayer {
                    weights,
                    bias,
                    activation,
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    fn check(&self, x: &Image) -> Result<()> {
        if x.pixels().len() == self.input_dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "MLP expects {} inputs, image has {} values",
                self.input_dim(),
                x.pixels().len()
            )))
        }
    }

    /// Forward pass keeping every layer's pre-activations.
    fn forward(&self, input: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut activations = vec![input.to_vec()];
        let mut pres = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let pre = layer.pre_activation(activations.last().unwrap());
            activations.push(pre.iter().map(|&v| layer.activation.apply(v)).collect());
            pres.push(pre);
        }
        (activations, pres)
    }
}

impl BlackBoxModel for Mlp {
    fn evaluate(&self, x: &Image) -> Result<f64> {
        self.check(x)?;
        let (acts, _) = self.forward(x.pixels());
        Ok(acts.last().unwrap()[0])
    }

    fn gradient(&self, x: &Image) -> Result<Vec<f64>> {
        self.check(x)?;
        let (_, pres) = self.forward(x.pixels());
        let mut upstream = vec![1.0];
        for (layer, pre) in self.layers.iter().zip(&pres).rev() {
            let local: Vec<f64> = upstream
                .iter()
                .zip(pre)
                .map(|(g, &p)| g * layer.activation.derivative(p))
                .collect();
            let mut down = vec![0.0; layer.inputs()];
            for (row, g) in layer.weights.iter().zip(&local) {
                for (d, w) in down.iter_mut().zip(row) {
                    *d += w * g;
                }
            }
            upstream = down;
        }
        Ok(upstream)
    }

    fn has_gradient(&self) -> bool {
        true
    }

    /// Interval propagation of `[0, 1]^D` through the network.
    fn bound(&self) -> Option<f64> {
        let mut lo = vec![0.0; self.input_dim()];
        let mut hi = vec![1.0; self.input_dim()];
        for layer in &self.layers {
            let (mut nlo, mut nhi) = (layer.bias.clone(), layer.bias.clone());
            for (o, row) in layer.weights.iter().enumerate() {
                for (i, &w) in row.iter().enumerate() {
                    if w >= 0.0 {
                        nlo[o] += w * lo[i];
                        nhi[o] += w * hi[i];
                    } else {
                        nlo[o] += w * hi[i];
                        nhi[o] += w * lo[i];
                    }
                }
            }
            lo = nlo.iter().map(|&v| layer.activation.apply(v)).collect();
            hi = nhi.iter().map(|&v| layer.activation.apply(v)).collect();
        }
        Some(lo[0].abs().max(hi[0].abs()))
    }
}

/// Axis-aligned block of pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn pixel_indices(&self, image_width: usize) -> Vec<usize> {
        (self.row..self.row + self.height)
            .flat_map(|r| (self.col..self.col + self.width).map(move |c| r * image_width + c))
            .collect()
    }
}

/// Seeded MLP initialization inside a model spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpInit {
    /// Hidden layer widths; input width comes from the image, output is 1.
    pub hidden: Vec<usize>,
    pub seed: u64,
    #[serde(default = "default_init_scale")]
    pub scale: f64,
}

fn default_init_scale() -> f64 {
    1.0
}

/// A model built from a spec, with its concrete type.
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltModel {
    ShapeDetector(ShapeDetector),
    Linear(LinearModel),
    Mlp(Mlp),
    Constant(ConstantModel),
}

impl BuiltModel {
    pub fn as_model(&self) -> &dyn BlackBoxModel {
        match self {
            BuiltModel::ShapeDetector(m) => m,
            BuiltModel::Linear(m) => m,
            BuiltModel::Mlp(m) => m,
            BuiltModel::Constant(m) => m,
        }
    }
}

/// Model description as stored in JSON spec files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    ShapeDetector {
        tau: f64,
        #[serde(default)]
        pixels: Vec<usize>,
        #[serde(default)]
        rects: Vec<Rect>,
    },
    Linear {
        #[serde(default)]
        coefficients: Option<Vec<f64>>,
        #[serde(default)]
        coefficients_csv: Option<PathBuf>,
    },
    Mlp {
        #[serde(default)]
        layers: Option<Vec<DenseLayer>>,
        #[serde(default)]
        init: Option<MlpInit>,
    },
    Constant {
        value: f64,
    },
}

impl ModelSpec {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// Instantiates the model for images of the given shape. Relative CSV paths
    /// resolve against `base_dir`.
    pub fn build(
        &self,
        height: usize,
        width: usize,
        channels: usize,
        base_dir: &Path,
    ) -> Result<Box<dyn BlackBoxModel>> {
        Ok(match self.build_concrete(height, width, channels, base_dir)? {
            BuiltModel::ShapeDetector(m) => Box::new(m),
            BuiltModel::Linear(m) => Box::new(m),
            BuiltModel::Mlp(m) => Box::new(m),
            BuiltModel::Constant(m) => Box::new(m),
        })
    }

    /// As [`ModelSpec::build`], keeping the concrete type.
    pub fn build_concrete(
        &self,
        height: usize,
        width: usize,
        channels: usize,
        base_dir: &Path,
    ) -> Result<BuiltModel> {
        let values = height * width * channels;
        match self {
            ModelSpec::ShapeDetector { tau, pixels, rects } => {
                let mut all = pixels.clone();
                for r in rects {
                    if r.row + r.height > height || r.col + r.width > width {
                        return Err(Error::InvalidParameter(format!(
                            "shape rectangle {r:?} exceeds image {height}x{width}"
                        )));
                    }
                    all.extend(r.pixel_indices(width));
                }
                all.sort_unstable();
                all.dedup();
                if let Some(&u) = all.iter().find(|&&u| u >= height * width) {
                    return Err(Error::InvalidParameter(format!(
                        "shape pixel {u} outside image of {} pixels",
                        height * width
                    )));
                }
                Ok(BuiltModel::ShapeDetector(ShapeDetector::new(all, *tau)?))
            }
            ModelSpec::Linear {
                coefficients,
                coefficients_csv,
            } => {
                let coefs = match (coefficients, coefficients_csv) {
                    (Some(c), None) => c.clone(),
                    (None, Some(path)) => crate::io::read_values_csv(base_dir.join(path))?,
                    _ => {
                        return Err(Error::InvalidParameter(
                            "linear model needs exactly one of coefficients / coefficients_csv".into(),
                        ))
                    }
                };
                if coefs.len() != values {
                    return Err(Error::DimensionMismatch(format!(
                        "linear model has {} coefficients, image has {values} values",
                        coefs.len()
                    )));
                }
                Ok(BuiltModel::Linear(LinearModel::new(coefs)?))
            }
            ModelSpec::Mlp { layers, init } => {
                let mlp = match (layers, init) {
                    (Some(l), None) => Mlp::new(l.clone())?,
                    (None, Some(init)) => {
                        let mut sizes = vec![values];
                        sizes.extend(&init.hidden);
                        sizes.push(1);
                        Mlp::random(&sizes, init.seed, init.scale)?
                    }
                    _ => {
                        return Err(Error::InvalidParameter(
                            "mlp needs exactly one of layers / init".into(),
                        ))
                    }
                };
                if mlp.input_dim() != values {
                    return Err(Error::DimensionMismatch(format!(
                        "MLP expects {} inputs, image has {values} values",
                        mlp.input_dim()
                    )));
                }
                Ok(BuiltModel::Mlp(mlp))
            }
            ModelSpec::Constant { value } => Ok(BuiltModel::Constant(ConstantModel { value: *value })),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: &[f64]) -> Image {
        Image::new(1, v.len(), 1, v.to_vec()).unwrap()
    }

    fn central_difference(model: &dyn BlackBoxModel, x: &Image, h: f64) -> Vec<f64> {
        (0..x.pixels().len())
            .map(|k| {
                let mut up = x.pixels().to_vec();
                let mut down = x.pixels().to_vec();
                up[k] += h;
                down[k] -= h;
                let fu = model
                    .evaluate(&Image::from_raw(x.height(), x.width(), x.channels(), up))
                    .unwrap();
                let fd = model
                    .evaluate(&Image::from_raw(x.height(), x.width(), x.channels(), down))
                    .unwrap();
                (fu - fd) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn shape_detector_semantics() {
        let f = ShapeDetector::new(vec![0, 2], 0.5).unwrap();
        assert_eq!(f.evaluate(&img(&[1.0, 0.0, 1.0])).unwrap(), 1.0);
        assert_eq!(f.evaluate(&img(&[0.5, 0.0, 1.0])).unwrap(), 0.0);
        let empty = ShapeDetector::new(vec![], 0.5).unwrap();
        assert_eq!(empty.evaluate(&img(&[0.0])).unwrap(), 1.0);
        let rgb = Image::filled(1, 1, 3, 1.0).unwrap();
        assert!(f.evaluate(&rgb).is_err());
        assert!(ShapeDetector::new(vec![1, 1], 0.5).is_err());
        assert!(ShapeDetector::new(vec![1], 1.0).is_err());
    }

    #[test]
    fn shape_detector_piecewise_constant() {
        let f = ShapeDetector::new(vec![1], 0.5).unwrap();
        for v in [0.51, 0.7, 0.99] {
            assert_eq!(f.evaluate(&img(&[0.0, v])).unwrap(), 1.0);
            assert_eq!(f.evaluate(&img(&[0.3, v])).unwrap(), 1.0);
        }
    }

    #[test]
    fn linear_model_basics() {
        let f = LinearModel::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(f.evaluate(&img(&[0.0, 0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(f.evaluate(&img(&[0.3, 0.6, 0.9])).unwrap(), 0.6);
        assert!(f.evaluate(&img(&[0.0])).is_err());
        let g = LinearModel::new(vec![0.5, -2.0, 1.5]).unwrap();
        let x = img(&[0.2, 0.4, 0.6]);
        let fd = central_difference(&g, &x, 1e-5);
        for (a, b) in g.gradient(&x).unwrap().iter().zip(fd) {
            assert!((a - b).abs() < 1e-8);
        }
        assert_eq!(g.bound(), Some(2.0));
    }

    #[test]
    fn mlp_degenerate_cases() {
        let zero = Mlp::new(vec![
            DenseLayer {
                weights: vec![vec![0.0; 3]; 2],
                bias: vec![0.0; 2],
                activation: Activation::Tanh,
            },
            DenseLayer {
                weights: vec![vec![0.0; 2]],
                bias: vec![0.25],
                activation: Activation::Identity,
            },
        ])
        .unwrap();
        let x = img(&[0.1, 0.2, 0.3]);
        assert_eq!(zero.evaluate(&x).unwrap(), 0.25);
        assert!(zero.gradient(&x).unwrap().iter().all(|&g| g == 0.0));

        let lin = Mlp::new(vec![DenseLayer {
            weights: vec![vec![0.5, -1.0, 2.0]],
            bias: vec![0.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        let reference = LinearModel::new(vec![0.5, -1.0, 2.0]).unwrap();
        assert!((lin.evaluate(&x).unwrap() - reference.evaluate(&x).unwrap()).abs() < 1e-15);
        assert_eq!(lin.gradient(&x).unwrap(), reference.gradient(&x).unwrap());
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mlp = Mlp::random(&[12, 8, 5, 1], 3, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let x = Image::new(3, 4, 1, (0..12).map(|_| rng.gen::<f64>()).collect()).unwrap();
            let analytic = mlp.gradient(&x).unwrap();
            let fd = central_difference(&mlp, &x, 1e-5);
            let scale = analytic.iter().map(|g| g.abs()).fold(0.0, f64::max);
            for (a, b) in analytic.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-5 * scale.max(1e-3), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn declared_bounds_hold() {
        let mlp = Mlp::random(&[6, 4, 1], 9, 3.0).unwrap();
        let lin = LinearModel::new(vec![1.0, -3.0, 0.5, 0.5, 2.0, -0.25]).unwrap();
        let shape = ShapeDetector::new(vec![0, 5], 0.3).unwrap();
        let models: [&dyn BlackBoxModel; 3] = [&mlp, &lin, &shape];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let x = Image::new(2, 3, 1, (0..6).map(|_| rng.gen::<f64>()).collect()).unwrap();
            for m in models {
                assert!(m.evaluate(&x).unwrap().abs() <= m.bound().unwrap() + 1e-12);
            }
        }
    }

    #[test]
    fn spec_round_trip_and_build() {
        let json = r#"{"type":"shape_detector","tau":0.5,"pixels":[0],"rects":[{"row":1,"col":1,"height":1,"width":2}]}"#;
        let spec: ModelSpec = serde_json::from_str(json).unwrap();
        let model = spec.build(3, 4, 1, Path::new(".")).unwrap();
        let mut px = vec![0.0; 12];
        for u in [0, 5, 6] {
            px[u] = 1.0;
        }
        assert_eq!(model.evaluate(&Image::new(3, 4, 1, px).unwrap()).unwrap(), 1.0);

        let mlp: ModelSpec =
            serde_json::from_str(r#"{"type":"mlp","init":{"hidden":[4],"seed":1}}"#).unwrap();
        let a = mlp.build(2, 2, 1, Path::new(".")).unwrap();
        let b = mlp.build(2, 2, 1, Path::new(".")).unwrap();
        let x = Image::filled(2, 2, 1, 0.3).unwrap();
        assert_eq!(a.evaluate(&x).unwrap(), b.evaluate(&x).unwrap());

        let bad: ModelSpec = serde_json::from_str(r#"{"type":"linear","coefficients":[1.0]}"#).unwrap();
        assert!(bad.build(2, 2, 1, Path::new(".")).is_err());
    }
}
