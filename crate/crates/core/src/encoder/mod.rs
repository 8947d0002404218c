//! Convolutional feature encoders: VGG-19 (pretrained weights from a tensor archive)
//! and a seeded three-layer TINY net for desk-scale runs.
//!
//! Features are the raw convolution outputs, before the ReLU.

pub mod archive;
mod layers;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use ndarray::{Array1, Array2, Array3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::LayerFeatures;
use crate::measures::{FeatureMap, LayerId};
use archive::TensorArchive;
pub use layers::Conv3x3;

/// Smallest accepted image side.
pub const MIN_IMAGE_SIDE: usize = 32;

/// Environment variable naming the default VGG-19 archive manifest.
pub const WEIGHTS_ENV: &str = "CMDNST_WEIGHTS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Vgg19,
    Tiny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Conv {
        name: &'static str,
        cin: usize,
        cout: usize,
    },
    Relu,
    MaxPool,
    AvgPool,
}

use Stage::*;

/// VGG-19 through `conv5_1`.
const VGG19_STAGES: &[Stage] = &[
    Conv {
        name: "conv1_1",
        cin: 3,
        cout: 64,
    },
    Relu,
    Conv {
        name: "conv1_2",
        cin: 64,
        cout: 64,
    },
    Relu,
    MaxPool,
    Conv {
        name: "conv2_1",
        cin: 64,
        cout: 128,
    },
    Relu,
    Conv {
        name: "conv2_2",
        cin: 128,
        cout: 128,
    },
    Relu,
    MaxPool,
    Conv {
        name: "conv3_1",
        cin: 128,
        cout: 256,
    },
    Relu,
    Conv {
        name: "conv3_2",
        cin: 256,
        cout: 256,
    },
    Relu,
    Conv {
        name: "conv3_3",
        cin: 256,
        cout: 256,
    },
    Relu,
    Conv {
        name: "conv3_4",
        cin: 256,
        cout: 256,
    },
    Relu,
    MaxPool,
    Conv {
        name: "conv4_1",
        cin: 256,
        cout: 512,
    },
    Relu,
    Conv {
        name: "conv4_2",
        cin: 512,
        cout: 512,
    },
    Relu,
    Conv {
        name: "conv4_3",
        cin: 512,
        cout: 512,
    },
    Relu,
    Conv {
        name: "conv4_4",
        cin: 512,
        cout: 512,
    },
    Relu,
    MaxPool,
    Conv {
        name: "conv5_1",
        cin: 512,
        cout: 512,
    },
];

const TINY_STAGES: &[Stage] = &[
    Conv {
        name: "conv1_1",
        cin: 3,
        cout: 8,
    },
    Relu,
    AvgPool,
    Conv {
        name: "conv2_1",
        cin: 8,
        cout: 12,
    },
    Relu,
    AvgPool,
    Conv {
        name: "conv3_1",
        cin: 12,
        cout: 16,
    },
];

impl Architecture {
    fn stages(self) -> &'static [Stage] {
        match self {
            Architecture::Vgg19 => VGG19_STAGES,
            Architecture::Tiny => TINY_STAGES,
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Architecture::Vgg19 => "vgg19",
            Architecture::Tiny => "tiny",
        }
    }

    /// `(layer, output channels)` for every convolution, in network order.
    pub fn layer_table(self) -> Vec<(LayerId, usize)> {
        self.stages()
            .iter()
            .filter_map(|s| match s {
                Conv { name, cout, .. } => Some((LayerId::from(*name), *cout)),
                _ => None,
            })
            .collect()
    }

    pub fn channels(self, layer: &LayerId) -> Option<usize> {
        self.layer_table().into_iter().find(|(l, _)| l == layer).map(|(_, c)| c)
    }

    pub fn default_style_layers(self) -> Vec<LayerId> {
        match self {
            Architecture::Vgg19 => ["conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"]
                .into_iter()
                .map(LayerId::from)
                .collect(),
            Architecture::Tiny => ["conv1_1", "conv2_1", "conv3_1"]
                .into_iter()
                .map(LayerId::from)
                .collect(),
        }
    }

    pub fn default_content_layer(self) -> LayerId {
        match self {
            Architecture::Vgg19 => "conv4_1".into(),
            Architecture::Tiny => "conv3_1".into(),
        }
    }

    pub fn default_preprocessing(self) -> Preprocessing {
        match self {
            Architecture::Vgg19 => Preprocessing::IMAGENET,
            Architecture::Tiny => Preprocessing::IDENTITY,
        }
    }
}

/// Channel-wise standardization `(v - mean) / std` applied to `[0, 1]` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Preprocessing {
    pub const IMAGENET: Preprocessing = Preprocessing {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };
    pub const IDENTITY: Preprocessing = Preprocessing {
        mean: [0.0; 3],
        std: [1.0; 3],
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSource {
    /// Path to a tensor-archive manifest.
    Archive { path: PathBuf },
    /// Uniform initialization from a seed (TINY only).
    Seed { seed: u64, zero_bias: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub architecture: Architecture,
    pub weight_source: WeightSource,
    pub style_layers: Vec<LayerId>,
    pub content_layer: LayerId,
    pub preprocessing: Preprocessing,
}

impl EncoderSpec {
    pub fn vgg19(manifest: impl Into<PathBuf>) -> Self {
        let arch = Architecture::Vgg19;
        EncoderSpec {
            architecture: arch,
            weight_source: WeightSource::Archive { path: manifest.into() },
            style_layers: arch.default_style_layers(),
            content_layer: arch.default_content_layer(),
            preprocessing: arch.default_preprocessing(),
        }
    }

    pub fn tiny(seed: u64) -> Self {
        let arch = Architecture::Tiny;
        EncoderSpec {
            architecture: arch,
            weight_source: WeightSource::Seed { seed, zero_bias: false },
            style_layers: arch.default_style_layers(),
            content_layer: arch.default_content_layer(),
            preprocessing: arch.default_preprocessing(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let table = self.architecture.layer_table();
        let known = |l: &LayerId| table.iter().any(|(t, _)| t == l);
        if self.style_layers.is_empty() {
            return Err(Error::config("no style layers configured"));
        }
        for l in self.style_layers.iter().chain(std::iter::once(&self.content_layer)) {
            if !known(l) {
                return Err(Error::config(format!(
                    "layer {l} does not exist in {} (known: {})",
                    self.architecture.id(),
                    table.iter().map(|(t, _)| t.as_str()).collect::<Vec<_>>().join(", ")
                )));
            }
        }
        if self.preprocessing.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::config("preprocessing std must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Op {
    Conv { layer: LayerId, conv: Conv3x3 },
    Relu,
    MaxPool,
    AvgPool,
}

/// A frozen encoder. Forward passes do not mutate it, so one instance can serve several threads.
#[derive(Debug, Clone)]
pub struct Encoder {
    spec: EncoderSpec,
    ops: Vec<Op>,
}

pub fn load_encoder(spec: &EncoderSpec) -> Result<Encoder> {
    spec.validate()?;
    let stages = spec.architecture.stages();
    let ops = match &spec.weight_source {
        WeightSource::Seed { seed, zero_bias } => {
            if spec.architecture != Architecture::Tiny {
                return Err(Error::config(
                    "seeded weights are only available for the TINY architecture",
                ));
            }
            seeded_ops(stages, *seed, *zero_bias)
        }
        WeightSource::Archive { path } => {
            let archive = TensorArchive::read(path)?;
            if archive.architecture != spec.architecture.id() {
                return Err(Error::Load {
                    path: path.clone(),
                    reason: format!(
                        "archive holds {} weights, encoder spec wants {}",
                        archive.architecture,
                        spec.architecture.id()
                    ),
                });
            }
            archive_ops(stages, &archive, path)?
        }
    };
    Ok(Encoder {
        spec: spec.clone(),
        ops,
    })
}

/// Kaiming-uniform weights for any architecture, packaged as an archive. The weights carry
/// no learned structure; they serve shape checks and timing when pretrained weights are absent.
pub fn random_archive(architecture: Architecture, seed: u64) -> TensorArchive {
    Encoder {
        spec: EncoderSpec {
            architecture,
            weight_source: WeightSource::Seed { seed, zero_bias: false },
            style_layers: architecture.default_style_layers(),
            content_layer: architecture.default_content_layer(),
            preprocessing: architecture.default_preprocessing(),
        },
        ops: seeded_ops(architecture.stages(), seed, false),
    }
    .to_archive()
}

fn seeded_ops(stages: &[Stage], seed: u64, zero_bias: bool) -> Vec<Op> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    stages
        .iter()
        .map(|s| match *s {
            Conv { name, cin, cout } => {
                let fan_in = (cin * 9) as f64;
                let bound = (6.0 / fan_in).sqrt();
                let weight = Array2::from_shape_fn((cout, cin * 9), |_| rng.random_range(-bound..bound));
                let bias = if zero_bias {
                    Array1::zeros(cout)
                } else {
                    Array1::from_shape_fn(cout, |_| rng.random_range(-0.1..0.1))
                };
                Op::Conv {
                    layer: name.into(),
                    conv: Conv3x3 { weight, bias },
                }
            }
            Relu => Op::Relu,
            MaxPool => Op::MaxPool,
            AvgPool => Op::AvgPool,
        })
        .collect()
}

fn archive_ops(stages: &[Stage], archive: &TensorArchive, path: &std::path::Path) -> Result<Vec<Op>> {
    let bad = |reason: String| Error::Load {
        path: path.to_path_buf(),
        reason,
    };
    stages
        .iter()
        .map(|s| match *s {
            Conv { name, cin, cout } => {
                let get = |part: &str, shape: Vec<usize>| -> Result<Vec<f64>> {
                    let key = format!("{name}.{part}");
                    let t = archive
                        .tensors
                        .get(&key)
                        .ok_or_else(|| bad(format!("missing tensor {key}")))?;
                    if t.shape != shape {
                        return Err(bad(format!("tensor {key} has shape {:?}, expected {shape:?}", t.shape)));
                    }
                    if t.data.iter().any(|v| !v.is_finite()) {
                        return Err(bad(format!("tensor {key} has non-finite values")));
                    }
                    Ok(t.data.iter().map(|v| *v as f64).collect())
                };
                let weight = Array2::from_shape_vec((cout, cin * 9), get("weight", vec![cout, cin, 3, 3])?)
                    .expect("shape checked");
                let bias = Array1::from(get("bias", vec![cout])?);
                Ok(Op::Conv {
                    layer: name.into(),
                    conv: Conv3x3 { weight, bias },
                })
            }
            Relu => Ok(Op::Relu),
            MaxPool => Ok(Op::MaxPool),
            AvgPool => Ok(Op::AvgPool),
        })
        .collect()
}

/// Cached state of one forward pass, needed to pull feature gradients back to pixels.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub features: LayerFeatures,
    height: usize,
    width: usize,
    tape: Vec<Tape>,
}

#[derive(Debug, Clone)]
enum Tape {
    Conv { h: usize, w: usize },
    Relu { pre: Array2<f64> },
    MaxPool { h: usize, w: usize, arg: Vec<u32> },
    AvgPool { h: usize, w: usize },
}

impl Encoder {
    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn architecture(&self) -> Architecture {
        self.spec.architecture
    }

    /// Encodes the weights of every convolution as a tensor archive.
    pub fn to_archive(&self) -> TensorArchive {
        let mut a = TensorArchive::new(self.spec.architecture.id());
        for op in &self.ops {
            if let Op::Conv { layer, conv } = op {
                let (cout, k) = conv.weight.dim();
                let w = conv.weight.iter().map(|v| *v as f32).collect();
                a.insert(
                    format!("{layer}.weight"),
                    archive::Tensor::new(vec![cout, k / 9, 3, 3], w).expect("consistent"),
                );
                let b = conv.bias.iter().map(|v| *v as f32).collect();
                a.insert(
                    format!("{layer}.bias"),
                    archive::Tensor::new(vec![cout], b).expect("consistent"),
                );
            }
        }
        a
    }

    fn check_layers(&self, layers: &[LayerId]) -> Result<usize> {
        let mut deepest = 0;
        for l in layers {
            let pos = self
                .ops
                .iter()
                .position(|op| matches!(op, Op::Conv { layer, .. } if layer == l))
                .ok_or_else(|| Error::config(format!("layer {l} does not exist in {}", self.spec.architecture.id())))?;
            deepest = deepest.max(pos);
        }
        Ok(deepest)
    }

    fn preprocess(&self, image: &Image) -> Result<Array2<f64>> {
        let px = image.pixels();
        let (h, w, _) = px.dim();
        if h < MIN_IMAGE_SIDE || w < MIN_IMAGE_SIDE {
            return Err(Error::invalid(format!(
                "image is {h}x{w}, both sides must be at least {MIN_IMAGE_SIDE}"
            )));
        }
        if px.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("image has non-finite pixels"));
        }
        let p = &self.spec.preprocessing;
        Ok(Array2::from_shape_fn((3, h * w), |(c, i)| {
            (px[[i / w, i % w, c]] - p.mean[c]) / p.std[c]
        }))
    }

    /// Raw convolution outputs of the requested layers.
    pub fn extract_features(&self, image: &Image, layers: &[LayerId]) -> Result<LayerFeatures> {
        self.run(image, layers, false).map(|p| p.features)
    }

    /// Like [`Encoder::extract_features`], keeping what [`Encoder::backward`] needs.
    pub fn forward(&self, image: &Image, layers: &[LayerId]) -> Result<ForwardPass> {
        self.run(image, layers, true)
    }

    fn run(&self, image: &Image, layers: &[LayerId], keep_tape: bool) -> Result<ForwardPass> {
        let deepest = self.check_layers(layers)?;
        let wanted: BTreeSet<&LayerId> = layers.iter().collect();
        let mut x = self.preprocess(image)?;
        let (mut h, mut w) = (image.height(), image.width());
        let (height, width) = (h, w);
        let mut features = LayerFeatures::new();
        let mut tape = Vec::new();
        for op in &self.ops[..=deepest] {
            match op {
                Op::Conv { layer, conv } => {
                    x = conv.forward(&x, h, w);
                    if wanted.contains(layer) {
                        features.insert(layer.clone(), FeatureMap::new(layer.clone(), x.clone())?);
                    }
                    if keep_tape {
                        tape.push(Tape::Conv { h, w });
                    }
                }
                Op::Relu => {
                    let y = layers::relu(&x);
                    if keep_tape {
                        tape.push(Tape::Relu {
                            pre: std::mem::replace(&mut x, y),
                        });
                    } else {
                        x = y;
                    }
                }
                Op::MaxPool => {
                    let (y, arg) = layers::max_pool(&x, h, w);
                    if keep_tape {
                        tape.push(Tape::MaxPool { h, w, arg });
                    }
                    x = y;
                    h /= 2;
                    w /= 2;
                }
                Op::AvgPool => {
                    x = layers::avg_pool(&x, h, w);
                    if keep_tape {
                        tape.push(Tape::AvgPool { h, w });
                    }
                    h /= 2;
                    w /= 2;
                }
            }
        }
        Ok(ForwardPass {
            features,
            height,
            width,
            tape,
        })
    }

    /// Pulls `dL/dF` at each tapped layer back to `dL/dpixel` (shape `H × W × 3`).
    pub fn backward(&self, pass: &ForwardPass, grads: &BTreeMap<LayerId, Array2<f64>>) -> Result<Array3<f64>> {
        if pass.tape.is_empty() {
            return Err(Error::invalid("forward pass was run without a tape"));
        }
        for (layer, g) in grads {
            let f = pass
                .features
                .get(layer)
                .ok_or_else(|| Error::invalid(format!("no forward features for layer {layer}")))?;
            if f.values().dim() != g.dim() {
                return Err(Error::invalid(format!("gradient for {layer} has the wrong shape")));
            }
        }
        let mut g: Option<Array2<f64>> = None;
        for (op, t) in self.ops[..pass.tape.len()].iter().zip(&pass.tape).rev() {
            match (op, t) {
                (Op::Conv { layer, conv }, Tape::Conv { h, w }) => {
                    if let Some(tap) = grads.get(layer) {
                        g = Some(match g {
                            Some(acc) => acc + tap,
                            None => tap.clone(),
                        });
                    }
                    g = g.map(|go| conv.backward(&go, *h, *w));
                }
                (Op::Relu, Tape::Relu { pre }) => {
                    if let Some(go) = g.as_mut() {
                        layers::relu_backward(pre, go);
                    }
                }
                (Op::MaxPool, Tape::MaxPool { h, w, arg }) => {
                    g = g.map(|go| layers::max_pool_backward(&go, arg, *h, *w));
                }
                (Op::AvgPool, Tape::AvgPool { h, w }) => {
                    g = g.map(|go| layers::avg_pool_backward(&go, *h, *w));
                }
                _ => unreachable!("tape out of sync with ops"),
            }
        }
        let (h, w) = (pass.height, pass.width);
        let p = &self.spec.preprocessing;
        let mut out = Array3::zeros((h, w, 3));
        if let Some(g) = g {
            for ((y, x, c), v) in out.indexed_iter_mut() {
                *v = g[[c, y * w + x]] / p.std[c];
            }
        }
        Ok(out)
    }
}
