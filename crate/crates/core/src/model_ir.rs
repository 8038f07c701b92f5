//! Network description format, validation and shape inference.
//!
//! A model is a linear chain of layers. Tensor node `i` is the input of
//! layer `i` and node `i + 1` its output, so a model with `n` layers has
//! `n + 1` tensor nodes.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub height: u32,
    pub width: u32,
    pub channels: u32,
}

impl TensorShape {
    pub fn new(height: u32, width: u32, channels: u32) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    /// A dense vector of `len` elements.
    pub fn vector(len: u32) -> Self {
        Self::new(1, 1, len)
    }

    pub fn elements(&self) -> u64 {
        self.height as u64 * self.width as u64 * self.channels as u64
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Size of a tensor in bytes.
pub fn tensor_bytes(shape: TensorShape, element_bytes: u32) -> u64 {
    shape.elements() * element_bytes as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv2d,
    DwConv2d,
    MaxPool2d,
    AvgPool2d,
    GlobalPool,
    Dense,
}

impl LayerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::DwConv2d => "dwconv2d",
            LayerKind::MaxPool2d => "maxpool2d",
            LayerKind::AvgPool2d => "avgpool2d",
            LayerKind::GlobalPool => "global_pool",
            LayerKind::Dense => "dense",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "conv2d" => LayerKind::Conv2d,
            "dwconv2d" => LayerKind::DwConv2d,
            "maxpool2d" => LayerKind::MaxPool2d,
            "avgpool2d" => LayerKind::AvgPool2d,
            "global_pool" => LayerKind::GlobalPool,
            "dense" => LayerKind::Dense,
            other => return Err(Error::UnsupportedKind(other.to_string())),
        })
    }

    /// Sliding-window layers can be placed in a fusion block.
    pub fn is_fusible(&self) -> bool {
        !matches!(self, LayerKind::GlobalPool | LayerKind::Dense)
    }

    pub fn is_pool(&self) -> bool {
        matches!(self, LayerKind::MaxPool2d | LayerKind::AvgPool2d)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One layer of the chain. Kernels are square; stride and padding are
/// symmetric. `GlobalPool` and `Dense` carry `kernel = stride = 1` and
/// `padding = 0` until shape inference resolves the pooling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: u32,
    pub stride: u32,
    pub padding: u32,
    pub in_channels: u32,
    pub out_channels: u32,
}

impl LayerSpec {
    pub fn conv(k: u32, s: u32, p: u32, c_in: u32, c_out: u32) -> Self {
        Self::windowed(LayerKind::Conv2d, k, s, p, c_in, c_out)
    }

    pub fn dwconv(k: u32, s: u32, p: u32, c: u32) -> Self {
        Self::windowed(LayerKind::DwConv2d, k, s, p, c, c)
    }

    pub fn max_pool(k: u32, s: u32, p: u32, c: u32) -> Self {
        Self::windowed(LayerKind::MaxPool2d, k, s, p, c, c)
    }

    pub fn avg_pool(k: u32, s: u32, p: u32, c: u32) -> Self {
        Self::windowed(LayerKind::AvgPool2d, k, s, p, c, c)
    }

    pub fn global_pool(c: u32) -> Self {
        Self::windowed(LayerKind::GlobalPool, 1, 1, 0, c, c)
    }

    pub fn dense(c_in: u32, c_out: u32) -> Self {
        Self::windowed(LayerKind::Dense, 1, 1, 0, c_in, c_out)
    }

    fn windowed(kind: LayerKind, k: u32, s: u32, p: u32, c_in: u32, c_out: u32) -> Self {
        Self {
            kind,
            kernel: k,
            stride: s,
            padding: p,
            in_channels: c_in,
            out_channels: c_out,
        }
    }

    pub fn fusible(&self) -> bool {
        self.kind.is_fusible()
    }

    /// Output shape for the given input, or a description of what failed.
    pub fn output_shape(&self, input: TensorShape) -> std::result::Result<TensorShape, String> {
        match self.kind {
            LayerKind::GlobalPool => Ok(TensorShape::vector(input.channels)),
            LayerKind::Dense => {
                if input.height != 1 || input.width != 1 {
                    return Err(format!("dense layer expects a 1x1 input, got {input}"));
                }
                Ok(TensorShape::vector(self.out_channels))
            }
            _ => {
                let h = conv_out_dim(input.height, self.kernel, self.stride, self.padding)
                    .ok_or_else(|| {
                        format!(
                            "height {} too small for kernel {}",
                            input.height, self.kernel
                        )
                    })?;
                let w = conv_out_dim(input.width, self.kernel, self.stride, self.padding)
                    .ok_or_else(|| {
                        format!("width {} too small for kernel {}", input.width, self.kernel)
                    })?;
                Ok(TensorShape::new(h, w, self.out_channels))
            }
        }
    }
}

/// `floor((dim + 2p - k) / s) + 1`, or `None` when the window does not fit.
pub fn conv_out_dim(dim: u32, k: u32, s: u32, p: u32) -> Option<u32> {
    let padded = dim + 2 * p;
    if padded < k {
        return None;
    }
    Some((padded - k) / s + 1)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkModel {
    pub name: String,
    pub input_shape: TensorShape,
    pub layers: Vec<LayerSpec>,
    pub element_bytes: u32,
}

impl NetworkModel {
    /// Builds a model from parts and validates it. `GlobalPool` kernels are
    /// resolved to the incoming feature-map height.
    pub fn new(
        name: impl Into<String>,
        input_shape: TensorShape,
        layers: Vec<LayerSpec>,
        element_bytes: u32,
    ) -> Result<Self> {
        let mut model = Self {
            name: name.into(),
            input_shape,
            layers,
            element_bytes,
        };
        model.validate()?;
        let shapes = infer_shapes(&model)?;
        for (layer, shape) in model.layers.iter_mut().zip(&shapes) {
            if layer.kind == LayerKind::GlobalPool {
                layer.kernel = shape.height;
            }
        }
        Ok(model)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.input_shape;
        if s.height == 0 || s.width == 0 || s.channels == 0 {
            return Err(Error::Model(format!(
                "input shape {s} has a zero dimension"
            )));
        }
        if self.element_bytes == 0 {
            return Err(Error::Model("element_bytes must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Model("model has no layers".into()));
        }
        let mut channels = s.channels;
        for (i, layer) in self.layers.iter().enumerate() {
            validate_layer(i, layer)?;
            if layer.in_channels != channels {
                return Err(Error::Value {
                    layer: i,
                    msg: format!(
                        "in_channels {} does not match incoming channels {}",
                        layer.in_channels, channels
                    ),
                });
            }
            channels = layer.out_channels;
        }
        Ok(())
    }
}

fn validate_layer(i: usize, layer: &LayerSpec) -> Result<()> {
    let bad = |msg: String| Err(Error::Value { layer: i, msg });
    if layer.in_channels == 0 || layer.out_channels == 0 {
        return bad("channel counts must be positive".into());
    }
    match layer.kind {
        LayerKind::GlobalPool | LayerKind::Dense => {
            if layer.stride != 1 || layer.padding != 0 {
                return bad(format!("{} takes no stride or padding", layer.kind));
            }
            if layer.kind == LayerKind::Dense && layer.kernel != 1 {
                return bad("dense takes no kernel".into());
            }
        }
        _ => {
            if layer.kernel == 0 || layer.stride == 0 {
                return bad("kernel and stride must be positive".into());
            }
            if layer.padding >= layer.kernel {
                return bad(format!(
                    "padding {} must be smaller than kernel {}",
                    layer.padding, layer.kernel
                ));
            }
        }
    }
    if layer.kind != LayerKind::Conv2d
        && layer.kind != LayerKind::Dense
        && layer.in_channels != layer.out_channels
    {
        return bad(format!(
            "{} requires in_channels == out_channels",
            layer.kind
        ));
    }
    Ok(())
}

/// Shapes of every tensor node: element 0 is the model input, element
/// `i + 1` the output of layer `i`.
pub fn infer_shapes(model: &NetworkModel) -> Result<Vec<TensorShape>> {
    let mut shapes = Vec::with_capacity(model.layers.len() + 1);
    let mut current = model.input_shape;
    shapes.push(current);
    for (i, layer) in model.layers.iter().enumerate() {
        current = layer
            .output_shape(current)
            .map_err(|msg| Error::Shape { layer: i, msg })?;
        shapes.push(current);
    }
    Ok(shapes)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    name: String,
    input: InputDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    element_bytes: Option<u32>,
    layers: Vec<LayerDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InputDoc {
    h: u32,
    w: u32,
    c: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<u32>,
    c_in: u32,
    c_out: u32,
}

/// Parses and validates a model JSON document.
pub fn parse_model(text: &str) -> Result<NetworkModel> {
    let doc: ModelDoc = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (i, l) in doc.layers.iter().enumerate() {
        let kind = LayerKind::parse(&l.kind)?;
        let layer = if kind.is_fusible() {
            let k =
                l.k.ok_or_else(|| Error::Schema(format!("layer {i}: missing field `k`")))?;
            LayerSpec::windowed(kind, k, l.s.unwrap_or(1), l.p.unwrap_or(0), l.c_in, l.c_out)
        } else {
            LayerSpec::windowed(
                kind,
                l.k.unwrap_or(1),
                l.s.unwrap_or(1),
                l.p.unwrap_or(0),
                l.c_in,
                l.c_out,
            )
        };
        // A global_pool window is always the whole feature map.
        if kind == LayerKind::GlobalPool && l.k.is_some() {
            return Err(Error::Value {
                layer: i,
                msg: "global_pool window is implied by its input; omit `k`".into(),
            });
        }
        layers.push(layer);
    }
    let input = TensorShape::new(doc.input.h, doc.input.w, doc.input.c);
    NetworkModel::new(doc.name, input, layers, doc.element_bytes.unwrap_or(1))
}

/// Serializes a model back into the JSON document format.
pub fn model_to_json(model: &NetworkModel) -> String {
    let doc = ModelDoc {
        name: model.name.clone(),
        input: InputDoc {
            h: model.input_shape.height,
            w: model.input_shape.width,
            c: model.input_shape.channels,
        },
        element_bytes: Some(model.element_bytes),
        layers: model
            .layers
            .iter()
            .map(|l| {
                let windowed = l.fusible();
                LayerDoc {
                    kind: l.kind.as_str().to_string(),
                    k: windowed.then_some(l.kernel),
                    s: windowed.then_some(l.stride),
                    p: windowed.then_some(l.padding),
                    c_in: l.in_channels,
                    c_out: l.out_channels,
                }
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("model document serializes")
}
