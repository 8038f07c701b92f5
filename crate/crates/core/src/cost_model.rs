//! Analytical RAM and MAC costs of single layers and H-cache fusion blocks.
//!
//! A fusion block slides a tile along the height axis of its input. Each
//! iteration produces one row of the block output; every layer computes the
//! rows its consumer needs across the full width, keeping a `t x k` column
//! window of its input in a line buffer (layers after the first only).
//!
//! Compute cost per fused layer is `N_tile * O_tile * k^2 * X`, with `X`
//! the per-output multiply factor (`c_in` for convolutions, 1 for
//! depthwise, 0 for pooling). When a downstream layer of the block pads its
//! input, the tiles of the upstream layers no longer start on the grid that
//! `N_tile` assumes; there the row count is summed directly over the
//! iterations instead (see [`fused_block_macs`]).

use crate::error::{Error, Result};
use crate::model_ir::{tensor_bytes, LayerKind, LayerSpec, TensorShape};

/// Tile geometry of one layer inside a fusion block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileEntry {
    /// Rows of this layer's (padded) input read per iteration.
    pub tile: u32,
    /// Input rows the tile advances per iteration.
    pub tile_stride: u32,
    pub kernel: u32,
    pub layer_stride: u32,
    pub in_channels: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub layers: Vec<TileEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockCost {
    pub input_bytes: u64,
    pub output_bytes: u64,
    pub buffer_bytes: u64,
    pub macs: u64,
    pub ram_bytes: u64,
}

/// Multiplies per output element, excluding the `k^2` window.
fn mac_factor(layer: &LayerSpec) -> u64 {
    match layer.kind {
        LayerKind::Conv2d => layer.in_channels as u64,
        LayerKind::DwConv2d => 1,
        _ => 0,
    }
}

/// MACs of a layer executed on its whole input at once.
pub fn vanilla_macs(layer: &LayerSpec, in_shape: TensorShape) -> Result<u64> {
    let out = layer
        .output_shape(in_shape)
        .map_err(|msg| Error::Shape { layer: 0, msg })?;
    Ok(match layer.kind {
        LayerKind::Dense => layer.in_channels as u64 * layer.out_channels as u64,
        LayerKind::GlobalPool => 0,
        _ => {
            let k = layer.kernel as u64;
            out.elements() * k * k * mac_factor(layer)
        }
    })
}

/// Back-propagates the receptive field of one output row through the block.
/// The last layer reads exactly one kernel window; every earlier layer must
/// produce the rows its successor reads.
pub fn propagate_tiles(block: &[LayerSpec]) -> Result<TilePlan> {
    if block.is_empty() {
        return Err(Error::InvalidSetting("empty fusion block".into()));
    }
    if let Some(i) = block.iter().position(|l| !l.fusible()) {
        return Err(Error::NotFusible(i));
    }
    let mut layers = Vec::with_capacity(block.len());
    let last = block[block.len() - 1];
    let mut tile = last.kernel;
    let mut tile_stride = last.stride;
    layers.push(TileEntry {
        tile,
        tile_stride,
        kernel: last.kernel,
        layer_stride: last.stride,
        in_channels: last.in_channels,
    });
    for layer in block.iter().rev().skip(1) {
        tile = (tile - 1) * layer.stride + layer.kernel;
        tile_stride *= layer.stride;
        layers.push(TileEntry {
            tile,
            tile_stride,
            kernel: layer.kernel,
            layer_stride: layer.stride,
            in_channels: layer.in_channels,
        });
    }
    layers.reverse();
    Ok(TilePlan { layers })
}

/// Line-buffer bytes of a block: `t_i * k_i * c_in_i` for every layer but
/// the first, which reads its input tensor directly.
pub fn cache_buffer_bytes(plan: &TilePlan, element_bytes: u32) -> u64 {
    plan.layers
        .iter()
        .skip(1)
        .map(|e| e.tile as u64 * e.kernel as u64 * e.in_channels as u64)
        .sum::<u64>()
        * element_bytes as u64
}

/// Number of overlapped tiles a layer is sliced into:
/// `floor((h + 2p - t) / s_tile + 1) * floor((w + 2p - k) / s_layer + 1)`.
pub fn n_tiles(
    in_shape: TensorShape,
    padding: u32,
    tile: u32,
    tile_stride: u32,
    kernel: u32,
    layer_stride: u32,
) -> Result<u64> {
    let h = in_shape.height + 2 * padding;
    let w = in_shape.width + 2 * padding;
    if h < tile || w < kernel {
        return Err(Error::Shape {
            layer: 0,
            msg: format!("tile {tile}x{kernel} exceeds padded input {h}x{w}"),
        });
    }
    let along_h = (h - tile) / tile_stride + 1;
    let along_w = (w - kernel) / layer_stride + 1;
    Ok(along_h as u64 * along_w as u64)
}

/// Rows each layer of the block produces per block-output row, summed over
/// all iterations. Rows falling into a consumer's zero padding are skipped.
fn iterated_rows(block: &[LayerSpec], shapes: &[TensorShape]) -> Vec<u64> {
    let n = block.len();
    let mut totals = vec![0u64; n];
    let out_rows = shapes[n].height as i64;
    for r in 0..out_rows {
        let (mut lo, mut hi) = (r, r + 1);
        totals[n - 1] += 1;
        for i in (1..n).rev() {
            let l = &block[i];
            let (s, p, k) = (l.stride as i64, l.padding as i64, l.kernel as i64);
            let h_in = shapes[i].height as i64;
            let new_lo = (lo * s - p).max(0);
            let new_hi = ((hi - 1) * s - p + k).min(h_in);
            lo = new_lo;
            hi = new_hi;
            totals[i - 1] += (hi - lo) as u64;
        }
    }
    totals
}

/// MACs of a fusion block. `shapes` holds the block input followed by the
/// output shape of every layer (`block.len() + 1` entries).
///
/// A layer whose downstream layers are all unpadded uses the tile formula
/// as is. Otherwise its row count is summed over iterations; both agree
/// whenever no downstream padding exists.
pub fn fused_block_macs(block: &[LayerSpec], shapes: &[TensorShape]) -> Result<u64> {
    assert_eq!(shapes.len(), block.len() + 1, "one shape per tensor node");
    let plan = propagate_tiles(block)?;
    let mut tile_counts = Vec::with_capacity(block.len());
    for (i, (layer, entry)) in block.iter().zip(&plan.layers).enumerate() {
        let n = n_tiles(
            shapes[i],
            layer.padding,
            entry.tile,
            entry.tile_stride,
            entry.kernel,
            entry.layer_stride,
        )
        .map_err(|e| relabel(e, i))?;
        tile_counts.push(n);
    }
    let mut rows = None;
    let mut total = 0u64;
    for (i, (layer, entry)) in block.iter().zip(&plan.layers).enumerate() {
        let k2 = layer.kernel as u64 * layer.kernel as u64;
        let per_output = k2 * mac_factor(layer);
        let aligned = block[i + 1..].iter().all(|l| l.padding == 0);
        let layer_macs = if aligned {
            let out_rows_per_tile = ((entry.tile - entry.kernel) / entry.layer_stride + 1) as u64;
            let o_tile = out_rows_per_tile * layer.out_channels as u64;
            tile_counts[i] * o_tile * per_output
        } else {
            let rows = rows.get_or_insert_with(|| iterated_rows(block, shapes));
            rows[i] * shapes[i + 1].width as u64 * layer.out_channels as u64 * per_output
        };
        total += layer_macs;
    }
    Ok(total)
}

fn relabel(e: Error, layer: usize) -> Error {
    match e {
        Error::Shape { msg, .. } => Error::Shape { layer, msg },
        other => other,
    }
}

/// RAM and MAC cost of executing `block` as one edge. A single layer runs
/// unfused: no line buffer and its vanilla MAC count.
pub fn block_cost(
    block: &[LayerSpec],
    shapes: &[TensorShape],
    element_bytes: u32,
) -> Result<BlockCost> {
    assert_eq!(shapes.len(), block.len() + 1, "one shape per tensor node");
    let input_bytes = tensor_bytes(shapes[0], element_bytes);
    let output_bytes = tensor_bytes(shapes[block.len()], element_bytes);
    let (buffer_bytes, macs) = if block.len() == 1 {
        (0, vanilla_macs(&block[0], shapes[0])?)
    } else {
        let plan = propagate_tiles(block)?;
        (
            cache_buffer_bytes(&plan, element_bytes),
            fused_block_macs(block, shapes)?,
        )
    };
    Ok(BlockCost {
        input_bytes,
        output_bytes,
        buffer_bytes,
        macs,
        ram_bytes: input_bytes + output_bytes + buffer_bytes,
    })
}

/// RAM of a global pooling or dense layer that consumes its input one
/// element at a time: the output accumulator plus one input element.
pub fn iterative_sink_ram_bytes(layer: &LayerSpec, element_bytes: u32) -> Result<u64> {
    match layer.kind {
        LayerKind::GlobalPool | LayerKind::Dense => {
            Ok((layer.out_channels as u64 + 1) * element_bytes as u64)
        }
        other => Err(Error::Kind(other.to_string())),
    }
}
