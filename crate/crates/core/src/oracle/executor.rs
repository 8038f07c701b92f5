//! Reference integer executor.
//!
//! `run_vanilla` materializes every tensor layer by layer. `run_fused`
//! executes a fusion setting: single edges run like vanilla, fusion blocks
//! run under the H-cache scheme. A block iteration produces one row of the
//! block output. Within it each layer sweeps its output columns left to
//! right; every layer after the first reads from a line buffer holding the
//! last `k` columns of the rows it needs, so horizontal overlap is cached
//! and vertical overlap between iterations is recomputed.
//!
//! All arithmetic is on `i64` with explicit requantization after each
//! multiplying layer, so vanilla and fused outputs can be compared exactly.

use std::collections::VecDeque;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fusion_graph::FusionSetting;
use crate::model_ir::{
    infer_shapes, tensor_bytes, LayerKind, LayerSpec, NetworkModel, TensorShape,
};

/// Dense HWC tensor of integers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor {
    pub shape: TensorShape,
    pub data: Vec<i64>,
}

impl Tensor {
    pub fn zeros(shape: TensorShape) -> Self {
        Self {
            shape,
            data: vec![0; shape.elements() as usize],
        }
    }

    pub fn from_fn(shape: TensorShape, mut f: impl FnMut(u32, u32, u32) -> i64) -> Self {
        let mut t = Self::zeros(shape);
        for y in 0..shape.height {
            for x in 0..shape.width {
                for c in 0..shape.channels {
                    let i = t.index(y as i64, x as i64, c as usize);
                    t.data[i] = f(y, x, c);
                }
            }
        }
        t
    }

    /// Uniform values in `-3..=3`.
    pub fn random(shape: TensorShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::from_fn(shape, |_, _, _| rng.gen_range(-3..=3))
    }

    fn index(&self, y: i64, x: i64, c: usize) -> usize {
        (y as usize * self.shape.width as usize + x as usize) * self.shape.channels as usize + c
    }

    /// Value at `(y, x, c)`, or `None` outside the tensor (zero padding).
    pub fn get(&self, y: i64, x: i64, c: usize) -> Option<i64> {
        if y < 0 || x < 0 || y >= self.shape.height as i64 || x >= self.shape.width as i64 {
            return None;
        }
        Some(self.data[self.index(y, x, c)])
    }
}

/// Per-layer weights, flattened `[c_out][ky][kx][c_in]` for convolutions,
/// `[c][ky][kx]` for depthwise and `[c_out][c_in]` for dense layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Weights {
    pub layers: Vec<Vec<i64>>,
}

impl Weights {
    /// Uniform weights in `-3..=3` from a fixed-seed generator.
    pub fn random(model: &NetworkModel, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let layers = model
            .layers
            .iter()
            .map(|l| {
                (0..weight_count(l))
                    .map(|_| rng.gen_range(-3..=3))
                    .collect()
            })
            .collect();
        Self { layers }
    }
}

pub fn weight_count(layer: &LayerSpec) -> usize {
    let k2 = (layer.kernel * layer.kernel) as usize;
    match layer.kind {
        LayerKind::Conv2d => layer.out_channels as usize * k2 * layer.in_channels as usize,
        LayerKind::DwConv2d => layer.out_channels as usize * k2,
        LayerKind::Dense => layer.out_channels as usize * layer.in_channels as usize,
        _ => 0,
    }
}

/// Counters of one execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecTrace {
    pub output: Tensor,
    pub mac_count: u64,
    /// Peak bytes of live activations and line buffers.
    pub peak_live_bytes: u64,
    pub per_layer_macs: Vec<u64>,
    /// Peak line-buffer bytes per setting edge (0 for single layers).
    pub peak_cache_bytes: Vec<u64>,
    /// Peak live bytes per setting edge.
    pub edge_peak_bytes: Vec<u64>,
}

fn requantize(acc: i64) -> i64 {
    (acc >> 2).clamp(-127, 127)
}

/// One output element of a sliding-window layer. `read` returns the layer
/// input at unpadded coordinates, `None` inside the padding.
fn window_output(
    layer: &LayerSpec,
    weights: &[i64],
    read: &impl Fn(i64, i64, usize) -> Option<i64>,
    oy: i64,
    ox: i64,
    co: usize,
    macs: &mut u64,
) -> i64 {
    let k = layer.kernel as i64;
    let (y0, x0) = (
        oy * layer.stride as i64 - layer.padding as i64,
        ox * layer.stride as i64 - layer.padding as i64,
    );
    match layer.kind {
        LayerKind::Conv2d => {
            let c_in = layer.in_channels as usize;
            let mut acc = 0i64;
            for ky in 0..k {
                for kx in 0..k {
                    for ci in 0..c_in {
                        let w = weights[((co * k as usize + ky as usize) * k as usize
                            + kx as usize)
                            * c_in
                            + ci];
                        acc += w * read(y0 + ky, x0 + kx, ci).unwrap_or(0);
                        *macs += 1;
                    }
                }
            }
            requantize(acc)
        }
        LayerKind::DwConv2d => {
            let mut acc = 0i64;
            for ky in 0..k {
                for kx in 0..k {
                    let w = weights[(co * k as usize + ky as usize) * k as usize + kx as usize];
                    acc += w * read(y0 + ky, x0 + kx, co).unwrap_or(0);
                    *macs += 1;
                }
            }
            requantize(acc)
        }
        LayerKind::MaxPool2d => {
            let mut best = i64::MIN;
            for ky in 0..k {
                for kx in 0..k {
                    if let Some(v) = read(y0 + ky, x0 + kx, co) {
                        best = best.max(v);
                    }
                }
            }
            best
        }
        LayerKind::AvgPool2d => {
            let mut sum = 0i64;
            for ky in 0..k {
                for kx in 0..k {
                    sum += read(y0 + ky, x0 + kx, co).unwrap_or(0);
                }
            }
            sum.div_euclid(k * k)
        }
        LayerKind::GlobalPool | LayerKind::Dense => unreachable!("sinks are not windowed"),
    }
}

/// Result of executing one setting edge.
struct EdgeRun {
    output: Tensor,
    per_layer_macs: Vec<u64>,
    peak_live: u64,
    peak_cache: u64,
}

fn run_single(
    layer: &LayerSpec,
    weights: &[i64],
    input: &Tensor,
    out_shape: TensorShape,
    eb: u32,
) -> EdgeRun {
    let mut macs = 0u64;
    match layer.kind {
        LayerKind::GlobalPool => {
            // Streams one input element at a time into per-channel sums.
            let c = input.shape.channels as usize;
            let mut acc = vec![0i64; c];
            for (i, v) in input.data.iter().enumerate() {
                acc[i % c] += v;
            }
            let n = (input.shape.height * input.shape.width) as i64;
            let output = Tensor {
                shape: out_shape,
                data: acc.iter().map(|s| s.div_euclid(n)).collect(),
            };
            let peak_live = (acc.len() as u64 + 1) * eb as u64;
            EdgeRun {
                output,
                per_layer_macs: vec![0],
                peak_live,
                peak_cache: 0,
            }
        }
        LayerKind::Dense => {
            let c_in = layer.in_channels as usize;
            let c_out = layer.out_channels as usize;
            let mut acc = vec![0i64; c_out];
            for (i, v) in input.data.iter().enumerate() {
                for (o, a) in acc.iter_mut().enumerate() {
                    *a += weights[o * c_in + i] * v;
                    macs += 1;
                }
            }
            let output = Tensor {
                shape: out_shape,
                data: acc.iter().map(|&a| requantize(a)).collect(),
            };
            let peak_live = (c_out as u64 + 1) * eb as u64;
            EdgeRun {
                output,
                per_layer_macs: vec![macs],
                peak_live,
                peak_cache: 0,
            }
        }
        _ => {
            let mut output = Tensor::zeros(out_shape);
            let read = |y, x, c| input.get(y, x, c);
            for oy in 0..out_shape.height as i64 {
                for ox in 0..out_shape.width as i64 {
                    for co in 0..out_shape.channels as usize {
                        let i = output.index(oy, ox, co);
                        output.data[i] =
                            window_output(layer, weights, &read, oy, ox, co, &mut macs);
                    }
                }
            }
            let peak_live = tensor_bytes(input.shape, eb) + tensor_bytes(out_shape, eb);
            EdgeRun {
                output,
                per_layer_macs: vec![macs],
                peak_live,
                peak_cache: 0,
            }
        }
    }
}

/// Input rows (unpadded, clipped to the tensor) a windowed layer reads to
/// produce `out_rows`.
fn input_rows(layer: &LayerSpec, out_rows: &Range<i64>, in_height: u32) -> Range<i64> {
    let (s, p, k) = (
        layer.stride as i64,
        layer.padding as i64,
        layer.kernel as i64,
    );
    let lo = (out_rows.start * s - p).max(0);
    let hi = ((out_rows.end - 1) * s - p + k).min(in_height as i64);
    lo..hi
}

/// Rows each layer of a block produces while computing block-output row
/// `r`, followed by the rows of the block input it reads.
pub fn block_row_windows(block: &[LayerSpec], shapes: &[TensorShape], r: u32) -> Vec<Range<i64>> {
    let n = block.len();
    let mut rows = vec![0..0; n + 1];
    rows[n] = r as i64..r as i64 + 1;
    for i in (0..n).rev() {
        rows[i] = input_rows(&block[i], &rows[i + 1], shapes[i].height);
    }
    // rows[i] is now the input of layer i; rows[n] is the block output row.
    rows
}

/// Line buffer: the last `capacity` columns of a fixed row range.
struct LineBuffer {
    rows: Range<i64>,
    channels: usize,
    capacity: usize,
    columns: VecDeque<(i64, Vec<i64>)>,
}

impl LineBuffer {
    fn push(&mut self, x: i64, column: Vec<i64>) {
        if self.columns.len() == self.capacity {
            self.columns.pop_front();
        }
        self.columns.push_back((x, column));
    }

    fn elements(&self) -> u64 {
        self.columns.iter().map(|(_, c)| c.len() as u64).sum()
    }

    fn get(&self, y: i64, x: i64, c: usize) -> i64 {
        assert!(
            self.rows.contains(&y),
            "row {y} outside line buffer rows {:?}",
            self.rows
        );
        let (_, col) = self
            .columns
            .iter()
            .find(|(cx, _)| *cx == x)
            .unwrap_or_else(|| panic!("column {x} evicted from line buffer"));
        col[(y - self.rows.start) as usize * self.channels + c]
    }
}

struct BlockRun<'a> {
    layers: &'a [LayerSpec],
    weights: &'a [&'a [i64]],
    shapes: &'a [TensorShape],
    input: &'a Tensor,
    output: Tensor,
    /// rows[i]: rows of layer i's input needed in the current iteration.
    rows: Vec<Range<i64>>,
    /// buffers[i - 1] feeds layer i.
    buffers: Vec<LineBuffer>,
    next_col: Vec<i64>,
    macs: Vec<u64>,
    eb: u64,
    written: u64,
    peak_live: u64,
    peak_cache: u64,
}

impl BlockRun<'_> {
    fn cache_bytes(&self) -> u64 {
        self.buffers.iter().map(LineBuffer::elements).sum::<u64>() * self.eb
    }

    fn observe(&mut self) {
        let cache = self.cache_bytes();
        self.peak_cache = self.peak_cache.max(cache);
        let live = self.input.data.len() as u64 * self.eb + self.written * self.eb + cache;
        self.peak_live = self.peak_live.max(live);
    }

    /// Computes output column `x` of layer `i` over its rows of this
    /// iteration.
    fn compute_column(&mut self, i: usize, x: i64) -> Vec<i64> {
        let layer = &self.layers[i];
        let out_rows = self.rows[i + 1].clone();
        let c_out = layer.out_channels as usize;
        let mut column = Vec::with_capacity(out_rows.clone().count() * c_out);
        let mut macs = 0u64;
        if i == 0 {
            let input = self.input;
            let read = |y, xx, c| input.get(y, xx, c);
            for oy in out_rows {
                for co in 0..c_out {
                    column.push(window_output(
                        layer,
                        self.weights[i],
                        &read,
                        oy,
                        x,
                        co,
                        &mut macs,
                    ));
                }
            }
        } else {
            let buf = &self.buffers[i - 1];
            let (h, w) = (self.shapes[i].height as i64, self.shapes[i].width as i64);
            let read = |y: i64, xx: i64, c| {
                if y < 0 || xx < 0 || y >= h || xx >= w {
                    None
                } else {
                    Some(buf.get(y, xx, c))
                }
            };
            for oy in out_rows {
                for co in 0..c_out {
                    column.push(window_output(
                        layer,
                        self.weights[i],
                        &read,
                        oy,
                        x,
                        co,
                        &mut macs,
                    ));
                }
            }
        }
        self.macs[i] += macs;
        column
    }

    /// Delivers column `x` of layer `i - 1`'s output to layer `i` and runs
    /// every column of layer `i` that became computable.
    fn feed(&mut self, i: usize, x: i64, column: Vec<i64>) {
        if i == self.layers.len() {
            let row = self.rows[i].start;
            let c = self.output.shape.channels as usize;
            let base = self.output.index(row, x, 0);
            self.output.data[base..base + c].copy_from_slice(&column);
            self.written += c as u64;
            self.observe();
            return;
        }
        self.buffers[i - 1].push(x, column);
        self.observe();
        let layer = self.layers[i];
        let (s, p, k) = (
            layer.stride as i64,
            layer.padding as i64,
            layer.kernel as i64,
        );
        let w_in = self.shapes[i].width as i64;
        let w_out = self.shapes[i + 1].width as i64;
        while self.next_col[i] < w_out {
            let ox = self.next_col[i];
            let last_needed = (ox * s - p + k - 1).min(w_in - 1);
            if last_needed > x {
                break;
            }
            let out = self.compute_column(i, ox);
            self.next_col[i] += 1;
            self.feed(i + 1, ox, out);
        }
    }

    fn run(mut self) -> EdgeRun {
        let n = self.layers.len();
        let out_h = self.shapes[n].height;
        for r in 0..out_h {
            self.rows = block_row_windows(self.layers, self.shapes, r);
            self.buffers = (1..n)
                .map(|i| LineBuffer {
                    rows: self.rows[i].clone(),
                    channels: self.layers[i].in_channels as usize,
                    capacity: self.layers[i].kernel as usize,
                    columns: VecDeque::new(),
                })
                .collect();
            self.next_col = vec![0; n];
            for x in 0..self.shapes[1].width as i64 {
                let column = self.compute_column(0, x);
                self.feed(1, x, column);
            }
            for i in 1..n {
                assert_eq!(
                    self.next_col[i],
                    self.shapes[i + 1].width as i64,
                    "layer {i} left columns unfinished"
                );
            }
        }
        EdgeRun {
            output: self.output,
            per_layer_macs: self.macs,
            peak_live: self.peak_live,
            peak_cache: self.peak_cache,
        }
    }
}

fn run_block(
    layers: &[LayerSpec],
    weights: &[&[i64]],
    shapes: &[TensorShape],
    input: &Tensor,
    eb: u32,
) -> EdgeRun {
    let n = layers.len();
    BlockRun {
        layers,
        weights,
        shapes,
        input,
        output: Tensor::zeros(shapes[n]),
        rows: Vec::new(),
        buffers: Vec::new(),
        next_col: Vec::new(),
        macs: vec![0; n],
        eb: eb as u64,
        written: 0,
        peak_live: 0,
        peak_cache: 0,
    }
    .run()
}

fn check_input(
    model: &NetworkModel,
    input: &Tensor,
    weights: &Weights,
) -> Result<Vec<TensorShape>> {
    if input.shape != model.input_shape {
        return Err(Error::Shape {
            layer: 0,
            msg: format!(
                "input {} does not match model input {}",
                input.shape, model.input_shape
            ),
        });
    }
    if weights.layers.len() != model.layers.len()
        || model
            .layers
            .iter()
            .zip(&weights.layers)
            .any(|(l, w)| w.len() != weight_count(l))
    {
        return Err(Error::InvalidSetting("weights do not match model".into()));
    }
    infer_shapes(model)
}

/// Layer-by-layer execution with whole tensors.
pub fn run_vanilla(model: &NetworkModel, input: &Tensor, weights: &Weights) -> Result<ExecTrace> {
    let spans: Vec<_> = (0..model.num_layers()).map(|i| i..i + 1).collect();
    run_spans(model, &spans, input, weights)
}

/// Executes a fusion setting of `model`.
pub fn run_fused(
    model: &NetworkModel,
    setting: &FusionSetting,
    input: &Tensor,
    weights: &Weights,
) -> Result<ExecTrace> {
    run_spans(model, &setting.spans(), input, weights)
}

fn run_spans(
    model: &NetworkModel,
    spans: &[Range<usize>],
    input: &Tensor,
    weights: &Weights,
) -> Result<ExecTrace> {
    let shapes = check_input(model, input, weights)?;
    let mut at = 0;
    for s in spans {
        if s.start != at || s.end <= s.start {
            return Err(Error::InvalidSetting(format!(
                "span {s:?} does not continue from {at}"
            )));
        }
        if s.len() > 1 && model.layers[s.clone()].iter().any(|l| !l.fusible()) {
            return Err(Error::InvalidSetting(format!(
                "span {s:?} contains a non-fusible layer"
            )));
        }
        at = s.end;
    }
    if at != model.num_layers() {
        return Err(Error::InvalidSetting(format!(
            "setting covers {at} of {} layers",
            model.num_layers()
        )));
    }

    let eb = model.element_bytes;
    let mut current = input.clone();
    let mut per_layer_macs = Vec::with_capacity(model.num_layers());
    let mut edge_peak_bytes = Vec::with_capacity(spans.len());
    let mut peak_cache_bytes = Vec::with_capacity(spans.len());
    for s in spans {
        let run = if s.len() == 1 {
            let i = s.start;
            run_single(
                &model.layers[i],
                &weights.layers[i],
                &current,
                shapes[i + 1],
                eb,
            )
        } else {
            let w: Vec<&[i64]> = weights.layers[s.clone()]
                .iter()
                .map(Vec::as_slice)
                .collect();
            run_block(
                &model.layers[s.clone()],
                &w,
                &shapes[s.start..=s.end],
                &current,
                eb,
            )
        };
        per_layer_macs.extend(run.per_layer_macs);
        edge_peak_bytes.push(run.peak_live);
        peak_cache_bytes.push(run.peak_cache);
        current = run.output;
    }
    Ok(ExecTrace {
        output: current,
        mac_count: per_layer_macs.iter().sum(),
        peak_live_bytes: edge_peak_bytes.iter().copied().max().unwrap_or(0),
        per_layer_macs,
        peak_cache_bytes,
        edge_peak_bytes,
    })
}
