use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub c: u32,
    pub h: u32,
    pub w: u32,
}

impl Dims {
    pub const fn new(c: u32, h: u32, w: u32) -> Self {
        Dims { c, h, w }
    }

    pub fn size(&self) -> u32 {
        self.c * self.h * self.w
    }

    pub fn index(&self, c: u32, y: u32, x: u32) -> u32 {
        (c * self.h + y) * self.w + x
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.c, self.h, self.w)
    }
}

/// Fixed-point LIF parameters. The membrane is 16-bit; `leak_q8 / 256` is the
/// per-timestep decay factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NeuronParams {
    pub leak_q8: u16,
    pub threshold: i16,
    pub reset: i16,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    /// `weights[o * inputs + i]`
    Fc {
        inputs: u32,
        outputs: u32,
        weights: Vec<i8>,
    },
    /// `weights[((oc * in_channels + ic) * kernel + ky) * kernel + kx]`
    Conv {
        in_channels: u32,
        out_channels: u32,
        kernel: u32,
        stride: u32,
        padding: u32,
        weights: Vec<i8>,
    },
    MaxPool {
        kernel: u32,
        stride: u32,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Fc { .. } => "fc",
            LayerKind::Conv { .. } => "conv",
            LayerKind::MaxPool { .. } => "maxpool",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Layer {
    pub kind: LayerKind,
    /// `None` for pooling layers, which fire when any input in the window fired.
    pub neuron: Option<NeuronParams>,
    pub input: Dims,
    pub output: Dims,
}

/// A validated spiking network. Layer 0 of the network is the input; layer
/// `k >= 1` is `layers[k - 1]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SnnModel {
    pub timesteps: u32,
    pub input: Dims,
    pub layers: Vec<Layer>,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("cannot read model file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("model parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported model format_version {0}")]
    Version(u32),
    #[error("layer {layer} ({kind}): excluded design choice: {rule}")]
    Excluded {
        layer: usize,
        kind: String,
        rule: &'static str,
    },
    #[error("layer {layer}: shape mismatch: {message}")]
    Shape { layer: usize, message: String },
    #[error("layer {layer}: {message}")]
    Param { layer: usize, message: String },
    #[error("model: {0}")]
    Model(String),
}

const AVGPOOL_RULE: &str =
    "average pooling is removed from the search space as hardware-unfriendly; use maxpool";
const PLIF_RULE: &str =
    "parametric LIF neurons are removed from the search space as hardware-unfriendly; use lif";

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    format_version: u32,
    timesteps: u32,
    input: [u32; 3],
    #[serde(default, rename = "layer")]
    layers: Vec<RawLayer>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    neuron: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    inputs: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    outputs: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    in_channels: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out_channels: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stride: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    padding: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    leak_q8: Option<u16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<i16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reset: Option<i16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<i8>>,
}

fn need(layer: usize, name: &str, v: Option<u32>) -> Result<u32, ModelError> {
    match v {
        Some(0) => Err(ModelError::Param {
            layer,
            message: format!("`{name}` must be positive"),
        }),
        Some(v) => Ok(v),
        None => Err(ModelError::Param {
            layer,
            message: format!("missing `{name}`"),
        }),
    }
}

fn forbid(layer: usize, kind: &str, fields: &[(&str, bool)]) -> Result<(), ModelError> {
    match fields.iter().find(|f| f.1) {
        Some((name, _)) => Err(ModelError::Param {
            layer,
            message: format!("`{name}` is not a {kind} field"),
        }),
        None => Ok(()),
    }
}

impl SnnModel {
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let raw: RawModel = toml::from_str(text)?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawModel) -> Result<Self, ModelError> {
        if raw.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Version(raw.format_version));
        }
        let [c, h, w] = raw.input;
        let input = Dims::new(c, h, w);
        if input.size() == 0 {
            return Err(ModelError::Model("input dims must be positive".into()));
        }
        let mut layers = Vec::with_capacity(raw.layers.len());
        let mut prev = input;
        for (i, rl) in raw.layers.into_iter().enumerate() {
            let li = i + 1;
            let layer = Self::layer_from_raw(li, prev, rl)?;
            prev = layer.output;
            layers.push(layer);
        }
        Self::new(raw.timesteps, input, layers)
    }

    fn layer_from_raw(li: usize, prev: Dims, rl: RawLayer) -> Result<Layer, ModelError> {
        match rl.neuron.as_deref() {
            None | Some("lif") => {}
            Some("plif") => {
                return Err(ModelError::Excluded {
                    layer: li,
                    kind: rl.kind,
                    rule: PLIF_RULE,
                })
            }
            Some(other) => {
                return Err(ModelError::Param {
                    layer: li,
                    message: format!("unknown neuron model `{other}`"),
                })
            }
        }
        let neuron = |rl: &RawLayer| -> Result<NeuronParams, ModelError> {
            let p = NeuronParams {
                leak_q8: rl.leak_q8.ok_or_else(|| ModelError::Param {
                    layer: li,
                    message: "missing `leak_q8`".into(),
                })?,
                threshold: rl.threshold.ok_or_else(|| ModelError::Param {
                    layer: li,
                    message: "missing `threshold`".into(),
                })?,
                reset: rl.reset.unwrap_or(0),
            };
            Ok(p)
        };
        let kind = match rl.kind.as_str() {
            "fc" => {
                forbid(
                    li,
                    "fc",
                    &[
                        ("in_channels", rl.in_channels.is_some()),
                        ("out_channels", rl.out_channels.is_some()),
                        ("kernel", rl.kernel.is_some()),
                        ("stride", rl.stride.is_some()),
                        ("padding", rl.padding.is_some()),
                    ],
                )?;
                LayerKind::Fc {
                    inputs: need(li, "inputs", rl.inputs)?,
                    outputs: need(li, "outputs", rl.outputs)?,
                    weights: rl.weights.clone().unwrap_or_default(),
                }
            }
            "conv" => {
                forbid(
                    li,
                    "conv",
                    &[("inputs", rl.inputs.is_some()), ("outputs", rl.outputs.is_some())],
                )?;
                LayerKind::Conv {
                    in_channels: need(li, "in_channels", rl.in_channels)?,
                    out_channels: need(li, "out_channels", rl.out_channels)?,
                    kernel: need(li, "kernel", rl.kernel)?,
                    stride: rl.stride.map_or(Ok(1), |s| need(li, "stride", Some(s)))?,
                    padding: rl.padding.unwrap_or(0),
                    weights: rl.weights.clone().unwrap_or_default(),
                }
            }
            "maxpool" => {
                forbid(
                    li,
                    "maxpool",
                    &[
                        ("inputs", rl.inputs.is_some()),
                        ("outputs", rl.outputs.is_some()),
                        ("in_channels", rl.in_channels.is_some()),
                        ("out_channels", rl.out_channels.is_some()),
                        ("padding", rl.padding.is_some()),
                        ("leak_q8", rl.leak_q8.is_some()),
                        ("threshold", rl.threshold.is_some()),
                        ("reset", rl.reset.is_some()),
                        ("weights", rl.weights.is_some()),
                        ("neuron", rl.neuron.is_some()),
                    ],
                )?;
                let kernel = need(li, "kernel", rl.kernel)?;
                LayerKind::MaxPool {
                    kernel,
                    stride: rl.stride.map_or(Ok(kernel), |s| need(li, "stride", Some(s)))?,
                }
            }
            "avgpool" | "avg_pool" | "averagepool" => {
                return Err(ModelError::Excluded {
                    layer: li,
                    kind: rl.kind,
                    rule: AVGPOOL_RULE,
                })
            }
            other => {
                return Err(ModelError::Param {
                    layer: li,
                    message: format!("unknown layer kind `{other}`"),
                })
            }
        };
        let neuron = match kind {
            LayerKind::MaxPool { .. } => None,
            _ => Some(neuron(&rl)?),
        };
        Layer::new(li, prev, kind, neuron)
    }

    /// Validates layer chaining and parameters.
    pub fn new(timesteps: u32, input: Dims, layers: Vec<Layer>) -> Result<Self, ModelError> {
        if timesteps == 0 {
            return Err(ModelError::Model("timesteps must be positive".into()));
        }
        if layers.is_empty() {
            return Err(ModelError::Model("model has no layers".into()));
        }
        let mut prev = input;
        for (i, l) in layers.iter().enumerate() {
            let rebuilt = Layer::new(i + 1, prev, l.kind.clone(), l.neuron)?;
            if rebuilt.output != l.output {
                return Err(ModelError::Shape {
                    layer: i + 1,
                    message: format!("declared output {} but computed {}", l.output, rebuilt.output),
                });
            }
            prev = l.output;
        }
        Ok(SnnModel {
            timesteps,
            input,
            layers,
        })
    }

    /// Neuron count per network layer, input first.
    pub fn layer_sizes(&self) -> Vec<u32> {
        std::iter::once(self.input.size())
            .chain(self.layers.iter().map(|l| l.output.size()))
            .collect()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len() + 1
    }

    pub fn total_neurons(&self) -> u64 {
        self.layer_sizes().iter().map(|&s| s as u64).sum()
    }

    /// Parameters of network layer `l` (`None` for the input and pooling layers).
    pub fn neuron_params(&self, l: usize) -> Option<NeuronParams> {
        if l == 0 {
            None
        } else {
            self.layers[l - 1].neuron
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_raw()).expect("model serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    fn to_raw(&self) -> RawModel {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let mut r = RawLayer {
                    kind: l.kind.name().to_string(),
                    ..RawLayer::default()
                };
                if let Some(n) = l.neuron {
                    r.leak_q8 = Some(n.leak_q8);
                    r.threshold = Some(n.threshold);
                    r.reset = Some(n.reset);
                }
                match &l.kind {
                    LayerKind::Fc {
                        inputs,
                        outputs,
                        weights,
                    } => {
                        r.inputs = Some(*inputs);
                        r.outputs = Some(*outputs);
                        r.weights = Some(weights.clone());
                    }
                    LayerKind::Conv {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                        weights,
                    } => {
                        r.in_channels = Some(*in_channels);
                        r.out_channels = Some(*out_channels);
                        r.kernel = Some(*kernel);
                        r.stride = Some(*stride);
                        r.padding = Some(*padding);
                        r.weights = Some(weights.clone());
                    }
                    LayerKind::MaxPool { kernel, stride } => {
                        r.kernel = Some(*kernel);
                        r.stride = Some(*stride);
                    }
                }
                r
            })
            .collect();
        RawModel {
            format_version: MODEL_FORMAT_VERSION,
            timesteps: self.timesteps,
            input: [self.input.c, self.input.h, self.input.w],
            layers,
        }
    }

    /// Source-centric synapse lists from network layer `l` into layer `l + 1`:
    /// `out[src]` holds `(target, weight)` sorted by target. Zero weights are
    /// dropped since they never change a membrane.
    pub fn fanout(&self, l: usize) -> Vec<Vec<(u32, i8)>> {
        let layer = &self.layers[l];
        let mut out = vec![Vec::new(); layer.input.size() as usize];
        layer.for_each_synapse(|src, dst, w| {
            if w != 0 {
                out[src as usize].push((dst, w));
            }
        });
        for v in &mut out {
            v.sort_unstable_by_key(|e| e.0);
        }
        out
    }
}

impl Layer {
    /// Computes the output shape and checks parameters. `li` is the network
    /// layer index used in messages.
    pub fn new(
        li: usize,
        input: Dims,
        kind: LayerKind,
        neuron: Option<NeuronParams>,
    ) -> Result<Layer, ModelError> {
        let output = match &kind {
            LayerKind::Fc {
                inputs,
                outputs,
                weights,
            } => {
                if *inputs != input.size() {
                    return Err(ModelError::Shape {
                        layer: li,
                        message: format!(
                            "fc expects {} inputs but previous layer has {} neurons ({})",
                            inputs,
                            input.size(),
                            input
                        ),
                    });
                }
                check_weights(li, weights.len(), (*inputs * *outputs) as usize)?;
                Dims::new(*outputs, 1, 1)
            }
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                weights,
            } => {
                if *in_channels != input.c {
                    return Err(ModelError::Shape {
                        layer: li,
                        message: format!(
                            "conv expects {} input channels but previous layer has {}",
                            in_channels, input.c
                        ),
                    });
                }
                let oh = conv_out(li, input.h, *kernel, *stride, *padding)?;
                let ow = conv_out(li, input.w, *kernel, *stride, *padding)?;
                check_weights(
                    li,
                    weights.len(),
                    (out_channels * in_channels * kernel * kernel) as usize,
                )?;
                Dims::new(*out_channels, oh, ow)
            }
            LayerKind::MaxPool { kernel, stride } => {
                if *stride == 0 {
                    return Err(ModelError::Param {
                        layer: li,
                        message: "`stride` must be positive".into(),
                    });
                }
                let oh = conv_out(li, input.h, *kernel, *stride, 0)?;
                let ow = conv_out(li, input.w, *kernel, *stride, 0)?;
                Dims::new(input.c, oh, ow)
            }
        };
        match (&kind, neuron) {
            (LayerKind::MaxPool { .. }, None) => {}
            (LayerKind::MaxPool { .. }, Some(_)) => {
                return Err(ModelError::Param {
                    layer: li,
                    message: "maxpool layers carry no neuron parameters".into(),
                })
            }
            (_, None) => {
                return Err(ModelError::Param {
                    layer: li,
                    message: "missing neuron parameters".into(),
                })
            }
            (_, Some(n)) => {
                if n.leak_q8 > 256 {
                    return Err(ModelError::Param {
                        layer: li,
                        message: format!("leak_q8 {} exceeds 256", n.leak_q8),
                    });
                }
                if n.threshold < 1 {
                    return Err(ModelError::Param {
                        layer: li,
                        message: format!("threshold {} must be at least 1", n.threshold),
                    });
                }
                if n.reset >= n.threshold {
                    return Err(ModelError::Param {
                        layer: li,
                        message: format!(
                            "reset {} must be below threshold {}",
                            n.reset, n.threshold
                        ),
                    });
                }
            }
        }
        Ok(Layer {
            kind,
            neuron,
            input,
            output,
        })
    }

    /// Visits every synapse `(src, dst, weight)` of the layer. Pooling windows
    /// report weight 1.
    pub fn for_each_synapse(&self, mut f: impl FnMut(u32, u32, i8)) {
        let (inp, out) = (self.input, self.output);
        match &self.kind {
            LayerKind::Fc {
                inputs,
                outputs,
                weights,
            } => {
                for o in 0..*outputs {
                    for i in 0..*inputs {
                        f(i, o, weights[(o * inputs + i) as usize]);
                    }
                }
            }
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                weights,
            } => {
                for oc in 0..*out_channels {
                    for oy in 0..out.h {
                        for ox in 0..out.w {
                            let dst = out.index(oc, oy, ox);
                            for ic in 0..*in_channels {
                                for ky in 0..*kernel {
                                    for kx in 0..*kernel {
                                        let iy = (oy * stride + ky) as i64 - *padding as i64;
                                        let ix = (ox * stride + kx) as i64 - *padding as i64;
                                        if iy < 0 || ix < 0 || iy >= inp.h as i64 || ix >= inp.w as i64 {
                                            continue;
                                        }
                                        let wi = ((oc * in_channels + ic) * kernel + ky) * kernel + kx;
                                        f(inp.index(ic, iy as u32, ix as u32), dst, weights[wi as usize]);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::MaxPool { kernel, stride } => {
                for c in 0..out.c {
                    for oy in 0..out.h {
                        for ox in 0..out.w {
                            let dst = out.index(c, oy, ox);
                            for ky in 0..*kernel {
                                for kx in 0..*kernel {
                                    f(inp.index(c, oy * stride + ky, ox * stride + kx), dst, 1);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_out(li: usize, size: u32, kernel: u32, stride: u32, padding: u32) -> Result<u32, ModelError> {
    let padded = size + 2 * padding;
    if kernel > padded {
        return Err(ModelError::Shape {
            layer: li,
            message: format!("kernel {kernel} larger than padded input {padded}"),
        });
    }
    Ok((padded - kernel) / stride + 1)
}

fn check_weights(li: usize, found: usize, expected: usize) -> Result<(), ModelError> {
    if found != expected {
        return Err(ModelError::Param {
            layer: li,
            message: format!("expected {expected} weights, found {found}"),
        });
    }
    Ok(())
}
