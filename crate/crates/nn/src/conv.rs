//! 1D and 2D convolution with padding, stride, dilation, causality, and
//! pooling. Layout is channels-last: images are (n, h, w, c), sequences
//! (n, t, c).
//!
//! The recorded path gathers kernel taps through an explicit index map
//! (out-of-range taps read zero) and contracts against the kernel with one
//! matmul. A naive direct-summation reference kernel with identical
//! accumulation order backs the fused path; the two must agree bit-exactly,
//! stride included.

use crate::error::NnError;
use ferrograd_core::{Reduction, Tape, Tensor, TensorError, Var};
use std::path::Path;
use std::rc::Rc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Padding {
    Same,
    Valid,
}

/// Hyper-parameters of a convolution. Kernel size is s = 2k+1 (the
/// patch-centered definition needs an odd size); `causal` applies to rank-1
/// convolutions only and restricts taps to the past and the center.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub half_width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
    pub causal: bool,
    pub depthwise: bool,
}

impl ConvSpec {
    pub fn new(half_width: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            half_width,
            in_channels,
            out_channels,
            stride: 1,
            dilation: 1,
            padding: Padding::Same,
            causal: false,
            depthwise: false,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn causal(mut self) -> Self {
        self.causal = true;
        self
    }

    pub fn depthwise(mut self) -> Self {
        self.depthwise = true;
        self
    }

    pub fn kernel_size(&self) -> usize {
        2 * self.half_width + 1
    }

    fn validate(&self, rank: usize) -> Result<(), NnError> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(NnError::Config(
                "stride and dilation must be at least 1".into(),
            ));
        }
        if self.causal && rank != 1 {
            return Err(NnError::Config("causal mode requires a 1D convolution".into()));
        }
        if self.depthwise && self.out_channels != self.in_channels {
            return Err(NnError::Config(
                "depthwise convolution keeps the channel count".into(),
            ));
        }
        Ok(())
    }

    /// Output extent along one spatial axis.
    fn out_extent(&self, extent: usize) -> Result<usize, NnError> {
        let span = 2 * self.half_width * self.dilation;
        let full = match self.padding {
            Padding::Same => extent,
            Padding::Valid => {
                if extent <= span {
                    return Err(NnError::Config(format!(
                        "kernel span {} exceeds input extent {extent}",
                        span + 1
                    )));
                }
                extent - span
            }
        };
        Ok(full.div_ceil(self.stride))
    }
}

/// The sub-image of half-width k centered at (i, j), under zero padding.
/// Without padding the center must sit at least k pixels from every border.
pub fn extract_patch(
    x: &Tensor,
    i: usize,
    j: usize,
    k: usize,
    zero_pad: bool,
) -> Result<Tensor, NnError> {
    if x.rank() != 3 {
        return Err(NnError::Config(format!(
            "extract_patch expects (h, w, c), got {:?}",
            x.shape()
        )));
    }
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if i >= h || j >= w {
        return Err(NnError::Tensor(TensorError::SliceOutOfBounds {
            axis: 0,
            range: (i, j),
            extent: h,
        }));
    }
    if !zero_pad && (i < k || j < k || i + k >= h || j + k >= w) {
        return Err(NnError::Config(format!(
            "patch center ({i}, {j}) is within {k} of the border; enable zero padding"
        )));
    }
    let s = 2 * k + 1;
    let mut out = Tensor::zeros(&[s, s, c]);
    for u in 0..s {
        for v in 0..s {
            let src_i = i as isize + u as isize - k as isize;
            let src_j = j as isize + v as isize - k as isize;
            if src_i < 0 || src_j < 0 || src_i >= h as isize || src_j >= w as isize {
                continue;
            }
            for d in 0..c {
                let val = x.at(&[src_i as usize, src_j as usize, d]);
                out.set(&[u, v, d], val);
            }
        }
    }
    Ok(out)
}

fn check_kernel(
    spec: &ConvSpec,
    w_shape: &[usize],
    expected: &[usize],
) -> Result<(), NnError> {
    if w_shape != expected {
        return Err(NnError::Config(format!(
            "kernel shape {w_shape:?} does not match spec ({expected:?})"
        )));
    }
    let _ = spec;
    Ok(())
}

/// 2D convolution of (n, h, w, c) with kernel (s, s, c, c′) and bias (c′).
pub fn conv2d<'t>(
    x: Var<'t>,
    spec: &ConvSpec,
    weight: Var<'t>,
    bias: Option<Var<'t>>,
) -> Result<Var<'t>, NnError> {
    spec.validate(2)?;
    let shape = x.shape();
    if shape.len() != 4 || shape[3] != spec.in_channels {
        return Err(NnError::WidthMismatch {
            layer: "conv2d",
            expected: spec.in_channels,
            actual: *shape.last().unwrap_or(&0),
        });
    }
    let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    let s = spec.kernel_size();
    let (oh, ow) = (spec.out_extent(h)?, spec.out_extent(w)?);
    let k = spec.half_width as isize;
    let d = spec.dilation as isize;
    let origin = match spec.padding {
        Padding::Same => 0isize,
        Padding::Valid => k * d,
    };

    // Index map for the gathered patches, laid out (n·oh·ow, s·s·c).
    let mut map: Vec<Option<usize>> = Vec::with_capacity(n * oh * ow * s * s * c);
    for b in 0..n {
        for oi in 0..oh {
            for oj in 0..ow {
                let ci = origin + (oi * spec.stride) as isize;
                let cj = origin + (oj * spec.stride) as isize;
                for u in 0..s as isize {
                    let si = ci + (u - k) * d;
                    for v in 0..s as isize {
                        let sj = cj + (v - k) * d;
                        let inside =
                            si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w;
                        for ch in 0..c {
                            map.push(if inside {
                                Some(((b * h + si as usize) * w + sj as usize) * c + ch)
                            } else {
                                None
                            });
                        }
                    }
                }
            }
        }
    }
    let patches = x.gather_map(Rc::new(map), &[n * oh * ow, s * s * c])?;

    if spec.depthwise {
        check_kernel(spec, &weight.shape(), &[s, s, c])?;
        // (N, s·s, c) ⊙ (s·s, c), summed over taps.
        let grouped = patches.reshape(&[n * oh * ow, s * s, c])?;
        let w_flat = weight.reshape(&[s * s, c])?;
        let mut out = grouped.mul(w_flat)?.sum_axes(&[1], false)?;
        if let Some(b) = bias {
            out = out.add(b)?;
        }
        return Ok(out.reshape(&[n, oh, ow, c])?);
    }

    check_kernel(spec, &weight.shape(), &[s, s, c, spec.out_channels])?;
    let w2d = weight.reshape(&[s * s * c, spec.out_channels])?;
    let mut out = patches.matmul(w2d)?;
    if let Some(b) = bias {
        out = out.add(b)?;
    }
    Ok(out.reshape(&[n, oh, ow, spec.out_channels])?)
}

/// 1D convolution of (n, t, c) with kernel (s, c, c′) and bias (c′).
///
/// Causal mode reads only the past-and-center taps 0..=k of the kernel
/// (equivalently: left-pad k·dilation zeros); the future taps k+1..s are
/// never touched, which matches zero-masking them in a centered kernel.
pub fn conv1d<'t>(
    x: Var<'t>,
    spec: &ConvSpec,
    weight: Var<'t>,
    bias: Option<Var<'t>>,
) -> Result<Var<'t>, NnError> {
    spec.validate(1)?;
    let shape = x.shape();
    if shape.len() != 3 || shape[2] != spec.in_channels {
        return Err(NnError::WidthMismatch {
            layer: "conv1d",
            expected: spec.in_channels,
            actual: *shape.last().unwrap_or(&0),
        });
    }
    let (n, t, c) = (shape[0], shape[1], shape[2]);
    let s = spec.kernel_size();
    let k = spec.half_width as isize;
    let d = spec.dilation as isize;
    let taps: Vec<isize> = if spec.causal {
        (0..=k).collect()
    } else {
        (0..s as isize).collect()
    };
    let ot = if spec.causal {
        t.div_ceil(spec.stride)
    } else {
        spec.out_extent(t)?
    };
    let origin = match (spec.causal, spec.padding) {
        (true, _) => 0isize,
        (false, Padding::Same) => 0,
        (false, Padding::Valid) => k * d,
    };

    let mut map: Vec<Option<usize>> = Vec::with_capacity(n * ot * taps.len() * c);
    for b in 0..n {
        for oi in 0..ot {
            let center = origin + (oi * spec.stride) as isize;
            for &u in &taps {
                let si = center + (u - k) * d;
                let inside = si >= 0 && (si as usize) < t;
                for ch in 0..c {
                    map.push(if inside {
                        Some((b * t + si as usize) * c + ch)
                    } else {
                        None
                    });
                }
            }
        }
    }
    let patches = x.gather_map(Rc::new(map), &[n * ot, taps.len() * c])?;

    if spec.depthwise {
        check_kernel(spec, &weight.shape(), &[s, c])?;
        let used = weight.slice(&[(0, taps.len()), (0, c)])?;
        let grouped = patches.reshape(&[n * ot, taps.len(), c])?;
        let mut out = grouped.mul(used)?.sum_axes(&[1], false)?;
        if let Some(b) = bias {
            out = out.add(b)?;
        }
        return Ok(out.reshape(&[n, ot, c])?);
    }

    check_kernel(spec, &weight.shape(), &[s, c, spec.out_channels])?;
    let used = weight
        .reshape(&[s, c * spec.out_channels])?
        .slice(&[(0, taps.len()), (0, c * spec.out_channels)])?
        .reshape(&[taps.len() * c, spec.out_channels])?;
    let mut out = patches.matmul(used)?;
    if let Some(b) = bias {
        out = out.add(b)?;
    }
    Ok(out.reshape(&[n, ot, spec.out_channels])?)
}

// ── Naive reference kernels (stride = full output, then subsample) ──

/// Direct-summation conv2d oracle: computes the full stride-1 output and
/// subsamples it, accumulating taps in (u, v, c) order exactly like the
/// fused path so the two agree bit-for-bit.
pub fn conv2d_reference(
    x: &Tensor,
    spec: &ConvSpec,
    weight: &Tensor,
    bias: Option<&Tensor>,
) -> Result<Tensor, NnError> {
    spec.validate(2)?;
    let (n, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let s = spec.kernel_size();
    let k = spec.half_width as isize;
    let d = spec.dilation as isize;
    let origin = match spec.padding {
        Padding::Same => 0isize,
        Padding::Valid => k * d,
    };
    let full_h = match spec.padding {
        Padding::Same => h,
        Padding::Valid => h - 2 * spec.half_width * spec.dilation,
    };
    let full_w = match spec.padding {
        Padding::Same => w,
        Padding::Valid => w - 2 * spec.half_width * spec.dilation,
    };
    let co = if spec.depthwise { c } else { spec.out_channels };
    let mut full = Tensor::zeros(&[n, full_h, full_w, co]);
    for b in 0..n {
        for oi in 0..full_h {
            for oj in 0..full_w {
                let ci = origin + oi as isize;
                let cj = origin + oj as isize;
                for z in 0..co {
                    let mut acc = 0.0;
                    for u in 0..s as isize {
                        let si = ci + (u - k) * d;
                        for v in 0..s as isize {
                            let sj = cj + (v - k) * d;
                            if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                                continue;
                            }
                            if spec.depthwise {
                                acc += weight.at(&[u as usize, v as usize, z])
                                    * x.at(&[b, si as usize, sj as usize, z]);
                            } else {
                                for ch in 0..c {
                                    acc += weight.at(&[u as usize, v as usize, ch, z])
                                        * x.at(&[b, si as usize, sj as usize, ch]);
                                }
                            }
                        }
                    }
                    if let Some(bias) = bias {
                        acc += bias.at(&[z]);
                    }
                    full.set(&[b, oi, oj, z], acc);
                }
            }
        }
    }
    subsample_spatial(&full, spec.stride, &[1, 2])
}

/// Direct-summation conv1d oracle mirroring `conv1d`, causality included.
pub fn conv1d_reference(
    x: &Tensor,
    spec: &ConvSpec,
    weight: &Tensor,
    bias: Option<&Tensor>,
) -> Result<Tensor, NnError> {
    spec.validate(1)?;
    let (n, t, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let s = spec.kernel_size();
    let k = spec.half_width as isize;
    let d = spec.dilation as isize;
    let taps: Vec<isize> = if spec.causal {
        (0..=k).collect()
    } else {
        (0..s as isize).collect()
    };
    let full_t = if spec.causal {
        t
    } else {
        match spec.padding {
            Padding::Same => t,
            Padding::Valid => t - 2 * spec.half_width * spec.dilation,
        }
    };
    let origin = match (spec.causal, spec.padding) {
        (true, _) => 0isize,
        (false, Padding::Same) => 0,
        (false, Padding::Valid) => k * d,
    };
    let co = if spec.depthwise { c } else { spec.out_channels };
    let mut full = Tensor::zeros(&[n, full_t, co]);
    for b in 0..n {
        for oi in 0..full_t {
            let center = origin + oi as isize;
            for z in 0..co {
                let mut acc = 0.0;
                for &u in &taps {
                    let si = center + (u - k) * d;
                    if si < 0 || si >= t as isize {
                        continue;
                    }
                    if spec.depthwise {
                        acc += weight.at(&[u as usize, z]) * x.at(&[b, si as usize, z]);
                    } else {
                        for ch in 0..c {
                            acc += weight.at(&[u as usize, ch, z]) * x.at(&[b, si as usize, ch]);
                        }
                    }
                }
                if let Some(bias) = bias {
                    acc += bias.at(&[z]);
                }
                full.set(&[b, oi, z], acc);
            }
        }
    }
    subsample_spatial(&full, spec.stride, &[1])
}

fn subsample_spatial(full: &Tensor, stride: usize, axes: &[usize]) -> Result<Tensor, NnError> {
    if stride == 1 {
        return Ok(full.clone());
    }
    let shape = full.shape().to_vec();
    let out_shape: Vec<usize> = shape
        .iter()
        .enumerate()
        .map(|(ax, &e)| {
            if axes.contains(&ax) {
                e.div_ceil(stride)
            } else {
                e
            }
        })
        .collect();
    let mut out = Tensor::zeros(&out_shape);
    let mut idx = vec![0usize; out_shape.len()];
    for flat in 0..out.len() {
        let src: Vec<usize> = idx
            .iter()
            .enumerate()
            .map(|(ax, &i)| if axes.contains(&ax) { i * stride } else { i })
            .collect();
        out.data_mut()[flat] = full.at(&src);
        for ax in (0..out_shape.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Ok(out)
}

// ── Pooling ─────────────────────────────────────────────────────────

/// Window max pooling over (n, h, w, c); odd remainders are truncated.
/// The backward pass routes each adjoint to the window argmax only.
pub fn max_pool2d<'t>(x: Var<'t>, window: usize) -> Result<Var<'t>, NnError> {
    let shape = x.shape();
    if shape.len() != 4 {
        return Err(NnError::Config(format!(
            "max_pool2d expects (n, h, w, c), got {shape:?}"
        )));
    }
    let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    if window == 0 || window > h || window > w {
        return Err(NnError::Config(format!(
            "window {window} exceeds spatial extents ({h}, {w})"
        )));
    }
    let (oh, ow) = (h / window, w / window);
    let mut map = Vec::with_capacity(n * oh * ow * c * window * window);
    for b in 0..n {
        for oi in 0..oh {
            for oj in 0..ow {
                for ch in 0..c {
                    for u in 0..window {
                        for v in 0..window {
                            let si = oi * window + u;
                            let sj = oj * window + v;
                            map.push(Some(((b * h + si) * w + sj) * c + ch));
                        }
                    }
                }
            }
        }
    }
    let windows = x.gather_map(Rc::new(map), &[n * oh * ow * c, window * window])?;
    let pooled = windows.max_axes(&[1], false)?;
    Ok(pooled.reshape(&[n, oh, ow, c])?)
}

/// Full spatial reduction of (n, h, w, c) to (n, c).
pub fn global_pool<'t>(x: Var<'t>, kind: Reduction) -> Result<Var<'t>, NnError> {
    let shape = x.shape();
    if shape.len() != 4 {
        return Err(NnError::Config(format!(
            "global_pool expects (n, h, w, c), got {shape:?}"
        )));
    }
    Ok(x.reduce(kind, &[1, 2], false)?)
}

// ── Variable-length batching ────────────────────────────────────────

/// Zero-pads sequences (tᵢ, c) to a (b, tmax, c) batch plus a binary
/// validity mask (b, tmax) with tᵢ ones then zeros per row.
pub fn pad_and_mask(sequences: &[Tensor]) -> Result<(Tensor, Tensor), NnError> {
    if sequences.is_empty() {
        return Err(NnError::Config("pad_and_mask: empty sequence list".into()));
    }
    let c = sequences[0].shape().get(1).copied().unwrap_or(0);
    for s in sequences {
        if s.rank() != 2 || s.shape()[1] != c {
            return Err(NnError::WidthMismatch {
                layer: "pad_and_mask",
                expected: c,
                actual: *s.shape().last().unwrap_or(&0),
            });
        }
    }
    let b = sequences.len();
    let tmax = sequences.iter().map(|s| s.shape()[0]).max().unwrap();
    let mut batch = Tensor::zeros(&[b, tmax, c]);
    let mut mask = Tensor::zeros(&[b, tmax]);
    for (row, seq) in sequences.iter().enumerate() {
        let t = seq.shape()[0];
        for i in 0..t {
            mask.set(&[row, i], 1.0);
            for j in 0..c {
                batch.set(&[row, i, j], seq.at(&[i, j]));
            }
        }
    }
    Ok((batch, mask))
}

/// Mean over valid positions per sequence: Σᵢ mask·x / Σᵢ mask.
pub fn masked_mean_pool<'t>(
    tape: &'t Tape,
    x: Var<'t>,
    mask: &Tensor,
) -> Result<Var<'t>, NnError> {
    let shape = x.shape();
    let (b, t, c) = (shape[0], shape[1], shape[2]);
    let m = tape.input(mask.reshape(&[b, t, 1])?);
    let summed = x.mul(m)?.sum_axes(&[1], false)?;
    let counts = mask.sum_axes(&[1], true)?; // (b, 1)
    let denom = tape.input(counts);
    Ok(summed.div(denom)?.reshape(&[b, c])?)
}

// ── Channel-layout adapters and the raw image fixture format ────────

pub fn nchw_to_nhwc(x: &Tensor) -> Result<Tensor, TensorError> {
    x.transpose(&[0, 2, 3, 1])
}

pub fn nhwc_to_nchw(x: &Tensor) -> Result<Tensor, TensorError> {
    x.transpose(&[0, 3, 1, 2])
}

/// PyTorch-style (c′, c, s, s) kernels to our (s, s, c, c′).
pub fn kernel_oihw_to_hwio(w: &Tensor) -> Result<Tensor, TensorError> {
    w.transpose(&[2, 3, 1, 0])
}

/// Writes a header-less little-endian f64 blob plus a JSON sidecar
/// (`<path>.json`) describing shape, dtype, and layout.
pub fn write_image_fixture(path: &Path, x: &Tensor) -> Result<(), NnError> {
    let mut bytes = Vec::with_capacity(x.len() * 8);
    for &v in x.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    let sidecar = serde_json::json!({
        "shape": x.shape(),
        "dtype": "f64",
        "layout": "nhwc",
    });
    std::fs::write(
        path.with_extension("json"),
        serde_json::to_string_pretty(&sidecar).expect("serializable"),
    )?;
    Ok(())
}

pub fn read_image_fixture(path: &Path) -> Result<Tensor, NnError> {
    let sidecar: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(path.with_extension("json"))
            .map_err(|e| NnError::Checkpoint(format!("missing sidecar: {e}")))?,
    )
    .map_err(|e| NnError::Checkpoint(format!("bad sidecar: {e}")))?;
    if sidecar["dtype"] != "f64" {
        return Err(NnError::Checkpoint("fixture dtype must be f64".into()));
    }
    let shape: Vec<usize> = sidecar["shape"]
        .as_array()
        .ok_or_else(|| NnError::Checkpoint("sidecar shape missing".into()))?
        .iter()
        .map(|v| v.as_u64().unwrap_or(0) as usize)
        .collect();
    let bytes = std::fs::read(path)?;
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Tensor::new(shape, data).map_err(NnError::Tensor)
}
