//! Forward tensor operations shared by every model component.
//!
//! The same kernels back the differentiable ops recorded on
//! [`Tape`](crate::autodiff::Tape), so values computed here and values
//! computed through a tape are bit-identical.

pub(crate) mod conv;
pub(crate) mod dense;
pub(crate) mod patch;

pub use conv::{Padding, SobelAxis};
pub use dense::{sigmoid, silu, softplus};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use conv::ConvGeom;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Dense convolution weights `[k_h, k_w, c_in, c_out]` plus an optional bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    weights: Tensor,
    bias: Option<Tensor>,
}

impl ConvKernel {
    pub fn new(weights: Tensor, bias: Option<Tensor>) -> Result<Self> {
        let [kh, kw, cin, cout] = *weights.shape() else {
            return Err(Error::shape(
                "conv kernel",
                "[kh, kw, cin, cout]",
                format!("{:?}", weights.shape()),
            ));
        };
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::EvenKernel(kh, kw));
        }
        if cin == 0 || cout == 0 {
            return Err(Error::shape(
                "conv kernel",
                "c_in, c_out >= 1",
                format!("{cin}, {cout}"),
            ));
        }
        if let Some(b) = &bias {
            if b.shape() != [cout] {
                return Err(Error::shape(
                    "conv bias",
                    format!("[{cout}]"),
                    format!("{:?}", b.shape()),
                ));
            }
        }
        Ok(Self { weights, bias })
    }

    /// Single-channel kernel from a row-major `k x k` stencil.
    pub fn single(k: usize, taps: &[f64]) -> Result<Self> {
        Self::new(Tensor::new(&[k, k, 1, 1], taps.to_vec())?, None)
    }

    /// Center tap 1 on the diagonal channel pairs, zero elsewhere.
    pub fn identity(k: usize, channels: usize) -> Result<Self> {
        let mut w = Tensor::zeros(&[k, k, channels, channels]);
        for c in 0..channels {
            w.set(&[k / 2, k / 2, c, c], 1.0);
        }
        Self::new(w, None)
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    pub fn extents(&self) -> (usize, usize, usize, usize) {
        let s = self.weights.shape();
        (s[0], s[1], s[2], s[3])
    }
}

/// Weights `[c_in, c_out]` and optional bias `[c_out]` of a last-axis affine map.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Affine {
    pub fn new(weight: Tensor, bias: Option<Tensor>) -> Self {
        Self { weight, bias }
    }

    /// Zero-bias map with an identity block in the leading columns.
    pub fn identity(cin: usize, cout: usize) -> Self {
        let mut w = Tensor::zeros(&[cin, cout]);
        for i in 0..cin.min(cout) {
            w.set(&[i, i], 1.0);
        }
        Self {
            weight: w,
            bias: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Silu,
    Softplus,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Silu => silu(x),
            Activation::Softplus => softplus(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Softplus => sigmoid(x),
        }
    }
}

pub fn conv2d(input: &Tensor, kernel: &ConvKernel, padding: Padding) -> Result<Tensor> {
    let (h, w, c) = input.hwc()?;
    let (kh, kw, cin, cout) = kernel.extents();
    if cin != c {
        return Err(Error::ChannelMismatch {
            op: "conv2d",
            expected: cin,
            got: c,
        });
    }
    let g = ConvGeom::new((h, w, c), (kh, kw, cout), padding)?;
    let out = conv::conv2d_forward(
        input.data(),
        kernel.weights.data(),
        kernel.bias.as_ref().map(Tensor::data),
        &g,
    );
    Tensor::new(&[g.oh, g.ow, cout], out)
}

/// Same-padded per-channel convolution with weights `[k, k, C]`.
pub fn depthwise_conv2d(input: &Tensor, weights: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (h, w, c) = input.hwc()?;
    let [kh, kw, kc] = *weights.shape() else {
        return Err(Error::shape(
            "depthwise_conv2d",
            "[k, k, C]",
            format!("{:?}", weights.shape()),
        ));
    };
    if kc != c {
        return Err(Error::ChannelMismatch {
            op: "depthwise_conv2d",
            expected: kc,
            got: c,
        });
    }
    if let Some(b) = bias {
        if b.shape() != [c] {
            return Err(Error::shape(
                "depthwise bias",
                format!("[{c}]"),
                format!("{:?}", b.shape()),
            ));
        }
    }
    let g = ConvGeom::new((h, w, c), (kh, kw, c), Padding::Same)?;
    let out = conv::depthwise_forward(input.data(), weights.data(), bias.map(Tensor::data), &g);
    Tensor::new(&[h, w, c], out)
}

pub(crate) fn linear_shape(
    input: &[usize],
    weight: &[usize],
    bias: Option<&[usize]>,
) -> Result<Vec<usize>> {
    let [cin, cout] = *weight else {
        return Err(Error::shape(
            "linear",
            "weight [cin, cout]",
            format!("{weight:?}"),
        ));
    };
    let last = input.last().copied().unwrap_or(1);
    if last != cin {
        return Err(Error::ChannelMismatch {
            op: "linear",
            expected: cin,
            got: last,
        });
    }
    if let Some(b) = bias {
        if b != [cout] {
            return Err(Error::shape(
                "linear bias",
                format!("[{cout}]"),
                format!("{b:?}"),
            ));
        }
    }
    let mut out = input.to_vec();
    match out.last_mut() {
        Some(l) => *l = cout,
        None => out.push(cout),
    }
    Ok(out)
}

/// Affine map over the trailing axis; leading axes are positions.
pub fn linear(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let shape = linear_shape(input.shape(), weight.shape(), bias.map(Tensor::shape))?;
    let (cin, cout) = (weight.shape()[0], weight.shape()[1]);
    let out = dense::linear_forward(
        input.data(),
        weight.data(),
        bias.map(Tensor::data),
        cin,
        cout,
    );
    Tensor::new(&shape, out)
}

pub fn layer_norm(input: &Tensor, gain: &Tensor, shift: &Tensor, eps: f64) -> Result<Tensor> {
    let c = input.channels();
    if gain.shape() != [c] || shift.shape() != [c] {
        return Err(Error::shape(
            "layer_norm",
            format!("gain/shift [{c}]"),
            format!("{:?}/{:?}", gain.shape(), shift.shape()),
        ));
    }
    let (y, _, _) = dense::layer_norm_forward(input.data(), gain.data(), shift.data(), eps);
    Tensor::new(input.shape(), y)
}

pub fn pointwise_activation(input: &Tensor, kind: Activation) -> Tensor {
    input.map(|v| kind.apply(v))
}

/// Per-channel spatial mean, `[H, W, C] -> [1, 1, C]`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (h, w, c) = input.hwc()?;
    if h == 0 || w == 0 {
        return Err(Error::Empty("global_avg_pool"));
    }
    Tensor::new(&[1, 1, c], dense::global_avg_pool(input.data(), c))
}

/// Horizontal and vertical Sobel responses with border replication.
pub fn sobel_components(image: &Tensor) -> Result<(Tensor, Tensor)> {
    let (h, w, c) = image.hwc()?;
    if c != 1 {
        return Err(Error::ChannelMismatch {
            op: "sobel_gradient",
            expected: 1,
            got: c,
        });
    }
    if h == 0 || w == 0 {
        return Err(Error::Empty("sobel_gradient"));
    }
    let gx = conv::sobel_forward(image.data(), h, w, SobelAxis::X);
    let gy = conv::sobel_forward(image.data(), h, w, SobelAxis::Y);
    Ok((Tensor::new(&[h, w], gx)?, Tensor::new(&[h, w], gy)?))
}

/// Edge magnitude `|G_x| + |G_y|` of a single-channel image, shaped `[H, W]`.
pub fn sobel_gradient(image: &Tensor) -> Result<Tensor> {
    let (gx, gy) = sobel_components(image)?;
    gx.zip_map(&gy, |a, b| a.abs() + b.abs())
}

fn check_divisible(op: &'static str, h: usize, w: usize, p: usize) -> Result<()> {
    for extent in [h, w] {
        if extent % p != 0 {
            return Err(Error::Indivisible {
                op,
                extent,
                divisor: p,
            });
        }
    }
    Ok(())
}

/// `[H, W, C] -> [H/p, W/p, p*p*C]`, see [`patch`] for the channel order.
pub fn space_to_depth(input: &Tensor, p: usize) -> Result<Tensor> {
    let (h, w, c) = input.hwc()?;
    check_divisible("space_to_depth", h, w, p)?;
    Tensor::new(
        &[h / p, w / p, p * p * c],
        patch::space_to_depth(input.data(), (h, w, c), p),
    )
}

/// `[H, W, p*p*C] -> [p*H, p*W, C]`.
pub fn depth_to_space(input: &Tensor, p: usize) -> Result<Tensor> {
    let (h, w, c) = input.hwc()?;
    if c % (p * p) != 0 {
        return Err(Error::Indivisible {
            op: "depth_to_space",
            extent: c,
            divisor: p * p,
        });
    }
    Tensor::new(
        &[h * p, w * p, c / (p * p)],
        patch::depth_to_space(input.data(), (h, w, c), p),
    )
}

pub const PATCH_SIZE: usize = 4;

/// Non-overlapping 4x4 patches projected to `C` channels.
pub fn patch_embed(image: &Tensor, proj: &Affine) -> Result<Tensor> {
    let patches = space_to_depth(image, PATCH_SIZE).map_err(|e| rename(e, "patch_embed"))?;
    linear(&patches, &proj.weight, proj.bias.as_ref())
}

/// 2x2 neighbourhoods concatenated to `4C` and reduced to `2C`.
pub fn patch_merge(input: &Tensor, proj: &Affine) -> Result<Tensor> {
    let merged = space_to_depth(input, 2).map_err(|e| rename(e, "patch_merge"))?;
    linear(&merged, &proj.weight, proj.bias.as_ref())
}

/// `C -> 2C` expansion rearranged into 2x2 blocks of `C/2` channels.
pub fn patch_expand(input: &Tensor, proj: &Affine) -> Result<Tensor> {
    let c = input.channels();
    if c % 2 != 0 {
        return Err(Error::OddChannels {
            op: "patch_expand",
            channels: c,
        });
    }
    let wide = linear(input, &proj.weight, proj.bias.as_ref())?;
    depth_to_space(&wide, 2)
}

fn rename(e: Error, op: &'static str) -> Error {
    match e {
        Error::Indivisible {
            extent, divisor, ..
        } => Error::Indivisible {
            op,
            extent,
            divisor,
        },
        other => other,
    }
}
