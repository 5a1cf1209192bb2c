//! Hand-designed three-stage filter bank used when no exported weights are
//! supplied.
//!
//! Stage 1 works on RGB pixels (signed luminance gradients at four
//! orientations, colour opponents, brightness, centre-surround). Stage 2
//! turns gradient polarities into opponent orientation energies. Stage 3
//! holds the 32 final filters listed in [`BUILTIN_FILTERS`]. All
//! convolutions are 3x3. After stages 1 and 2 come ReLU, a 2x2 max pool at
//! stride 1, and an unpadded binomial blur at stride 2; blurring before
//! subsampling keeps the pooled responses steady when a pattern moves by
//! less than the stride. Stage 3 is followed by a small dead zone (negative
//! bias and ReLU) and two padded stride-1 blurs. The blurs move each
//! filter's strongest cell toward the centre of its evidence, so the
//! deconvolution regions of different filters on one object overlap. The
//! final map advances one cell per 4 input pixels.
//!
//! Every weight below is a literal; nothing is drawn at run time.

use super::{BackboneError, BackboneSpec, Layer};
use crate::tensor::ConvKernel;

type Stencil = [[f32; 3]; 3];

const CENTER: Stencil = [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
const MEAN: Stencil = [[1.0 / 9.0; 3]; 3];
const ROW: Stencil = [[0.0, 0.0, 0.0], [0.5, 1.0, 0.5], [0.0, 0.0, 0.0]];
const COL: Stencil = [[0.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.5, 0.0]];
const ANTI_DIAG: Stencil = [[0.0, 0.0, 0.5], [0.0, 1.0, 0.0], [0.5, 0.0, 0.0]];
const DIAG: Stencil = [[0.5, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.5]];

// Sobel-type gradients normalised so a unit luminance step responds with 1.
const GRAD_X: Stencil = [[-0.25, 0.0, 0.25], [-0.5, 0.0, 0.5], [-0.25, 0.0, 0.25]];
const GRAD_Y: Stencil = [[-0.25, -0.5, -0.25], [0.0, 0.0, 0.0], [0.25, 0.5, 0.25]];
const GRAD_45: Stencil = [[-0.5, -0.25, 0.0], [-0.25, 0.0, 0.25], [0.0, 0.25, 0.5]];
const GRAD_135: Stencil = [[0.0, -0.25, -0.5], [0.25, 0.0, -0.25], [0.5, 0.25, 0.0]];
const SURROUND: Stencil = [
    [-0.125, -0.125, -0.125],
    [-0.125, 1.0, -0.125],
    [-0.125, -0.125, -0.125],
];

/// Stage-1 channels.
mod s1 {
    pub const DX_POS: usize = 0;
    pub const DX_NEG: usize = 1;
    pub const DY_POS: usize = 2;
    pub const DY_NEG: usize = 3;
    pub const D45_POS: usize = 4;
    pub const D45_NEG: usize = 5;
    pub const D135_POS: usize = 6;
    pub const D135_NEG: usize = 7;
    pub const RED_GREEN: usize = 8;
    pub const GREEN_RED: usize = 9;
    pub const BLUE_YELLOW: usize = 10;
    pub const YELLOW_BLUE: usize = 11;
    pub const BRIGHT: usize = 12;
    pub const DARK: usize = 13;
    pub const ON: usize = 14;
    pub const OFF: usize = 15;
    pub const COUNT: usize = 16;
}

/// Stage-2 channels.
mod s2 {
    pub const E_H: usize = 0;
    pub const E_V: usize = 1;
    pub const E_45: usize = 2;
    pub const E_135: usize = 3;
    pub const LIGHT_BELOW: usize = 4;
    pub const LIGHT_ABOVE: usize = 5;
    pub const LIGHT_RIGHT: usize = 6;
    pub const LIGHT_LEFT: usize = 7;
    pub const RED_GREEN: usize = 8;
    pub const GREEN_RED: usize = 9;
    pub const BLUE_YELLOW: usize = 10;
    pub const YELLOW_BLUE: usize = 11;
    pub const BRIGHT: usize = 12;
    pub const DARK: usize = 13;
    pub const ON: usize = 14;
    pub const OFF: usize = 15;
    pub const COUNT: usize = 16;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Edge,
    PolarEdge,
    Corner,
    Junction,
    Contour,
    Texture,
    Blob,
    Color,
    Region,
}

#[derive(Debug, Clone, Copy)]
pub struct FilterInfo {
    pub name: &'static str,
    pub kind: FilterKind,
}

const fn info(name: &'static str, kind: FilterKind) -> FilterInfo {
    FilterInfo { name, kind }
}

/// Names of the 32 final-layer filters, by index.
pub const BUILTIN_FILTERS: [FilterInfo; 32] = [
    info("edge_h", FilterKind::Edge),
    info("edge_v", FilterKind::Edge),
    info("edge_45", FilterKind::Edge),
    info("edge_135", FilterKind::Edge),
    info("light_below", FilterKind::PolarEdge),
    info("light_above", FilterKind::PolarEdge),
    info("light_right", FilterKind::PolarEdge),
    info("light_left", FilterKind::PolarEdge),
    info("corner_down_right", FilterKind::Corner),
    info("corner_down_left", FilterKind::Corner),
    info("corner_up_right", FilterKind::Corner),
    info("corner_up_left", FilterKind::Corner),
    info("junction_plus", FilterKind::Junction),
    info("junction_x", FilterKind::Junction),
    info("ring", FilterKind::Contour),
    info("checker", FilterKind::Texture),
    info("grating_h", FilterKind::Texture),
    info("grating_v", FilterKind::Texture),
    info("grating_45", FilterKind::Texture),
    info("grating_135", FilterKind::Texture),
    info("blob_on", FilterKind::Blob),
    info("blob_off", FilterKind::Blob),
    info("red_green", FilterKind::Color),
    info("green_red", FilterKind::Color),
    info("blue_yellow", FilterKind::Color),
    info("yellow_blue", FilterKind::Color),
    info("bright_region", FilterKind::Region),
    info("dark_region", FilterKind::Region),
    info("tee_down", FilterKind::Junction),
    info("tee_up", FilterKind::Junction),
    info("tee_right", FilterKind::Junction),
    info("tee_left", FilterKind::Junction),
];

/// Index of the builtin filter called `name`.
pub fn builtin_filter_index(name: &str) -> Option<usize> {
    BUILTIN_FILTERS.iter().position(|f| f.name == name)
}

/// Sparse stencil placement: output channel, input channel, stencil, scale.
type Taps = &'static [(usize, usize, Stencil, f32)];

/// Stencil built from `(row, col, weight)` points.
const fn pts<const N: usize>(points: [(usize, usize, f32); N]) -> Stencil {
    let mut s = [[0.0; 3]; 3];
    let mut i = 0;
    while i < N {
        let (r, c, w) = points[i];
        s[r][c] = w;
        i += 1;
    }
    s
}

// Stage 1 acts on luminance (mean of RGB) unless a colour channel is named.
const LUMA: usize = usize::MAX;
const R: usize = 0;
const G: usize = 1;
const B: usize = 2;

const STAGE1: Taps = &[
    (s1::DX_POS, LUMA, GRAD_X, 1.0),
    (s1::DX_NEG, LUMA, GRAD_X, -1.0),
    (s1::DY_POS, LUMA, GRAD_Y, 1.0),
    (s1::DY_NEG, LUMA, GRAD_Y, -1.0),
    (s1::D45_POS, LUMA, GRAD_45, 1.0),
    (s1::D45_NEG, LUMA, GRAD_45, -1.0),
    (s1::D135_POS, LUMA, GRAD_135, 1.0),
    (s1::D135_NEG, LUMA, GRAD_135, -1.0),
    (s1::RED_GREEN, R, MEAN, 1.0),
    (s1::RED_GREEN, G, MEAN, -1.0),
    (s1::GREEN_RED, G, MEAN, 1.0),
    (s1::GREEN_RED, R, MEAN, -1.0),
    (s1::BLUE_YELLOW, B, MEAN, 1.0),
    (s1::BLUE_YELLOW, R, MEAN, -0.5),
    (s1::BLUE_YELLOW, G, MEAN, -0.5),
    (s1::YELLOW_BLUE, B, MEAN, -1.0),
    (s1::YELLOW_BLUE, R, MEAN, 0.5),
    (s1::YELLOW_BLUE, G, MEAN, 0.5),
    (s1::BRIGHT, LUMA, MEAN, 1.0),
    (s1::DARK, LUMA, MEAN, -1.0),
    (s1::ON, LUMA, SURROUND, 1.0),
    (s1::OFF, LUMA, SURROUND, -1.0),
];

// Gradient and colour channels get a dead zone of 0.1 so that faint
// background texture stays at zero.
/// Stage-3 responses below this are cut to zero before the final blurs.
const STAGE3_DEAD_ZONE: f32 = 0.05;

const STAGE1_BIAS: [(usize, f32); 14] = [
    (s1::DX_POS, -0.1),
    (s1::DX_NEG, -0.1),
    (s1::DY_POS, -0.1),
    (s1::DY_NEG, -0.1),
    (s1::D45_POS, -0.1),
    (s1::D45_NEG, -0.1),
    (s1::D135_POS, -0.1),
    (s1::D135_NEG, -0.1),
    (s1::RED_GREEN, -0.1),
    (s1::GREEN_RED, -0.1),
    (s1::BLUE_YELLOW, -0.1),
    (s1::YELLOW_BLUE, -0.1),
    (s1::BRIGHT, -0.65),
    (s1::DARK, 0.35),
];

// Orientation energies are opponent pairs: a gradient detector at one
// angle answers 3/4 as strongly to an edge at the neighbouring angle, and
// subtracting the perpendicular detector cancels that leak exactly.
const STAGE2: Taps = &[
    (s2::E_H, s1::DY_POS, ROW, 1.0),
    (s2::E_H, s1::DY_NEG, ROW, 1.0),
    (s2::E_H, s1::DX_POS, ROW, -1.0),
    (s2::E_H, s1::DX_NEG, ROW, -1.0),
    (s2::E_V, s1::DX_POS, COL, 1.0),
    (s2::E_V, s1::DX_NEG, COL, 1.0),
    (s2::E_V, s1::DY_POS, COL, -1.0),
    (s2::E_V, s1::DY_NEG, COL, -1.0),
    (s2::E_45, s1::D45_POS, ANTI_DIAG, 1.0),
    (s2::E_45, s1::D45_NEG, ANTI_DIAG, 1.0),
    (s2::E_45, s1::D135_POS, ANTI_DIAG, -1.0),
    (s2::E_45, s1::D135_NEG, ANTI_DIAG, -1.0),
    (s2::E_135, s1::D135_POS, DIAG, 1.0),
    (s2::E_135, s1::D135_NEG, DIAG, 1.0),
    (s2::E_135, s1::D45_POS, DIAG, -1.0),
    (s2::E_135, s1::D45_NEG, DIAG, -1.0),
    (s2::LIGHT_BELOW, s1::DY_POS, ROW, 1.0),
    (s2::LIGHT_BELOW, s1::DX_POS, ROW, -0.5),
    (s2::LIGHT_BELOW, s1::DX_NEG, ROW, -0.5),
    (s2::LIGHT_ABOVE, s1::DY_NEG, ROW, 1.0),
    (s2::LIGHT_ABOVE, s1::DX_POS, ROW, -0.5),
    (s2::LIGHT_ABOVE, s1::DX_NEG, ROW, -0.5),
    (s2::LIGHT_RIGHT, s1::DX_POS, COL, 1.0),
    (s2::LIGHT_RIGHT, s1::DY_POS, COL, -0.5),
    (s2::LIGHT_RIGHT, s1::DY_NEG, COL, -0.5),
    (s2::LIGHT_LEFT, s1::DX_NEG, COL, 1.0),
    (s2::LIGHT_LEFT, s1::DY_POS, COL, -0.5),
    (s2::LIGHT_LEFT, s1::DY_NEG, COL, -0.5),
    (s2::RED_GREEN, s1::RED_GREEN, CENTER, 1.0),
    (s2::GREEN_RED, s1::GREEN_RED, CENTER, 1.0),
    (s2::BLUE_YELLOW, s1::BLUE_YELLOW, CENTER, 1.0),
    (s2::YELLOW_BLUE, s1::YELLOW_BLUE, CENTER, 1.0),
    (s2::BRIGHT, s1::BRIGHT, CENTER, 1.0),
    (s2::DARK, s1::DARK, CENTER, 1.0),
    (s2::ON, s1::ON, CENTER, 1.0),
    (s2::OFF, s1::OFF, CENTER, 1.0),
];

const ALL: Stencil = [[1.0; 3]; 3];

const STAGE3: Taps = &[
    // oriented edges
    (0, s2::E_H, ROW, 1.0),
    (1, s2::E_V, COL, 1.0),
    (2, s2::E_45, ANTI_DIAG, 1.0),
    (3, s2::E_135, DIAG, 1.0),
    // polarity edges
    (4, s2::LIGHT_BELOW, ROW, 1.0),
    (5, s2::LIGHT_ABOVE, ROW, 1.0),
    (6, s2::LIGHT_RIGHT, COL, 1.0),
    (7, s2::LIGHT_LEFT, COL, 1.0),
    // corners: two arms, penalised opposite arms
    (8, s2::E_H, pts([(1, 2, 1.0), (1, 0, -0.5)]), 1.0),
    (8, s2::E_V, pts([(2, 1, 1.0), (0, 1, -0.5)]), 1.0),
    (9, s2::E_H, pts([(1, 0, 1.0), (1, 2, -0.5)]), 1.0),
    (9, s2::E_V, pts([(2, 1, 1.0), (0, 1, -0.5)]), 1.0),
    (10, s2::E_H, pts([(1, 2, 1.0), (1, 0, -0.5)]), 1.0),
    (10, s2::E_V, pts([(0, 1, 1.0), (2, 1, -0.5)]), 1.0),
    (11, s2::E_H, pts([(1, 0, 1.0), (1, 2, -0.5)]), 1.0),
    (11, s2::E_V, pts([(0, 1, 1.0), (2, 1, -0.5)]), 1.0),
    // junctions
    (
        12,
        s2::E_H,
        pts([(1, 0, 0.5), (1, 1, 0.5), (1, 2, 0.5)]),
        1.0,
    ),
    (
        12,
        s2::E_V,
        pts([(0, 1, 0.5), (1, 1, 0.5), (2, 1, 0.5)]),
        1.0,
    ),
    (
        13,
        s2::E_45,
        pts([(0, 2, 0.5), (1, 1, 0.5), (2, 0, 0.5)]),
        1.0,
    ),
    (
        13,
        s2::E_135,
        pts([(0, 0, 0.5), (1, 1, 0.5), (2, 2, 0.5)]),
        1.0,
    ),
    // closed contour around a quiet centre
    (
        14,
        s2::E_H,
        pts([(0, 1, 0.5), (2, 1, 0.5), (1, 1, -0.5)]),
        1.0,
    ),
    (
        14,
        s2::E_V,
        pts([(1, 0, 0.5), (1, 2, 0.5), (1, 1, -0.5)]),
        1.0,
    ),
    (14, s2::E_45, pts([(0, 0, 0.5), (2, 2, 0.5)]), 1.0),
    (14, s2::E_135, pts([(0, 2, 0.5), (2, 0, 0.5)]), 1.0),
    // textures
    (15, s2::E_H, ALL, 0.15),
    (15, s2::E_V, ALL, 0.15),
    (15, s2::E_45, ALL, -0.1),
    (15, s2::E_135, ALL, -0.1),
    (16, s2::E_H, ALL, 0.25),
    (16, s2::E_V, ALL, -0.5),
    (16, s2::E_45, ALL, -0.15),
    (16, s2::E_135, ALL, -0.15),
    (17, s2::E_V, ALL, 0.25),
    (17, s2::E_H, ALL, -0.5),
    (17, s2::E_45, ALL, -0.15),
    (17, s2::E_135, ALL, -0.15),
    (18, s2::E_45, ALL, 0.25),
    (18, s2::E_135, ALL, -0.5),
    (18, s2::E_H, ALL, -0.15),
    (18, s2::E_V, ALL, -0.15),
    (19, s2::E_135, ALL, 0.25),
    (19, s2::E_45, ALL, -0.5),
    (19, s2::E_H, ALL, -0.15),
    (19, s2::E_V, ALL, -0.15),
    // centre-surround blobs
    (20, s2::BRIGHT, SURROUND, 1.0),
    (21, s2::DARK, SURROUND, 1.0),
    // colour opponents
    (22, s2::RED_GREEN, MEAN, 1.0),
    (23, s2::GREEN_RED, MEAN, 1.0),
    (24, s2::BLUE_YELLOW, MEAN, 1.0),
    (25, s2::YELLOW_BLUE, MEAN, 1.0),
    // regions
    (26, s2::BRIGHT, MEAN, 1.0),
    (27, s2::DARK, MEAN, 1.0),
    // tees: a through-line plus one stem
    (28, s2::E_H, pts([(1, 0, 0.5), (1, 2, 0.5)]), 1.0),
    (28, s2::E_V, pts([(2, 1, 1.0), (0, 1, -0.5)]), 1.0),
    (29, s2::E_H, pts([(1, 0, 0.5), (1, 2, 0.5)]), 1.0),
    (29, s2::E_V, pts([(0, 1, 1.0), (2, 1, -0.5)]), 1.0),
    (30, s2::E_V, pts([(0, 1, 0.5), (2, 1, 0.5)]), 1.0),
    (30, s2::E_H, pts([(1, 2, 1.0), (1, 0, -0.5)]), 1.0),
    (31, s2::E_V, pts([(0, 1, 0.5), (2, 1, 0.5)]), 1.0),
    (31, s2::E_H, pts([(1, 0, 1.0), (1, 2, -0.5)]), 1.0),
];

fn build(out: usize, inp: usize, taps: Taps, luma_inputs: bool) -> ConvKernel {
    let mut k = ConvKernel::zeros(out, inp, 3, 3, 1, 0);
    for &(o, c, stencil, scale) in taps {
        let targets: &[(usize, f32)] = if luma_inputs && c == LUMA {
            &[(R, 1.0 / 3.0), (G, 1.0 / 3.0), (B, 1.0 / 3.0)]
        } else {
            &[(c, 1.0)]
        };
        for &(ch, share) in targets {
            for (i, row) in stencil.iter().enumerate() {
                for (j, &w) in row.iter().enumerate() {
                    if w != 0.0 {
                        let cur = k.weight(o, ch, i, j);
                        k.set_weight(o, ch, i, j, cur + w * scale * share);
                    }
                }
            }
        }
    }
    k
}

/// The builtin bank for `height x width` RGB inputs (both at least 32).
pub fn builtin_filterbank(height: usize, width: usize) -> Result<BackboneSpec, BackboneError> {
    if height < 32 || width < 32 {
        return Err(BackboneError::InputTooSmall(height, width));
    }
    let mut conv1 = build(s1::COUNT, 3, STAGE1, true);
    for (c, b) in STAGE1_BIAS {
        conv1.biases[c] = b;
    }
    let conv2 = build(s2::COUNT, s1::COUNT, STAGE2, false);
    let mut conv3 = build(BUILTIN_FILTERS.len(), s2::COUNT, STAGE3, false);
    conv3.biases.fill(-STAGE3_DEAD_ZONE);
    let pool = Layer::MaxPool {
        window: 2,
        stride: 1,
    };
    BackboneSpec::new(vec![
        Layer::Conv(conv1),
        Layer::Relu,
        pool.clone(),
        Layer::Conv(blur(s1::COUNT, 2)),
        Layer::Conv(conv2),
        Layer::Relu,
        pool,
        Layer::Conv(blur(s2::COUNT, 2)),
        Layer::Conv(conv3),
        Layer::Relu,
        Layer::Conv(blur(BUILTIN_FILTERS.len(), 1)),
        Layer::Conv(blur(BUILTIN_FILTERS.len(), 1)),
    ])
}

/// Per-channel binomial blur.
fn blur(channels: usize, stride: usize) -> ConvKernel {
    const TAPS: [f32; 3] = [0.25, 0.5, 0.25];
    let mut k = ConvKernel::zeros(
        channels,
        channels,
        3,
        3,
        stride,
        if stride == 1 { 1 } else { 0 },
    );
    for c in 0..channels {
        for (i, a) in TAPS.iter().enumerate() {
            for (j, b) in TAPS.iter().enumerate() {
                k.set_weight(c, c, i, j, a * b);
            }
        }
    }
    k
}
