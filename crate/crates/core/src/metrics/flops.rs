//! Analytic per-frame FLOPs for one steady-state timestep of the pipeline
//! (extractor + alignment + propagation + hidden update + reconstruction).
//!
//! Convention: 1 MAC = 2 FLOPs, so a convolution contributes
//! 2 * kh * kw * Cin * Cout * H' * W'. Elementwise work is charged at the
//! documented per-element costs below. The convolution subtotal equals
//! exactly twice the MAC count the kernels record while executing one
//! timestep.

use crate::model::CtunConfig;

// per-element costs of non-convolution work
const COST_ADD: u64 = 1;
const COST_MUL: u64 = 1;
const COST_RELU: u64 = 1;
const COST_SIGMOID: u64 = 4;
const COST_TANH: u64 = 5;
const COST_LAYER_NORM: u64 = 8;
const COST_BILINEAR: u64 = 8; // per output element
const COST_REDUCE: u64 = 1; // channel/spatial mean and max, per input element

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopsBreakdown {
    /// Convolution FLOPs (2x MACs), exactly mirroring executed kernels.
    pub conv: u64,
    /// Elementwise, activation, normalization, and resampling FLOPs.
    pub other: u64,
}

impl FlopsBreakdown {
    pub fn total(&self) -> u64 {
        self.conv + self.other
    }
}

/// FLOPs of a single convolution: 2 * k^2 * Cin * Cout * H' * W'.
pub fn conv_flops(c_in: usize, c_out: usize, k: usize, oh: usize, ow: usize) -> u64 {
    2 * (k * k * c_in * c_out * oh * ow) as u64
}

/// Analytic count for one full timestep at LR size H x W.
pub fn count_flops(config: &CtunConfig, h: usize, w: usize) -> FlopsBreakdown {
    let c = config.channels;
    let rc = (c / 4).max(1);
    let hw = (h * w) as u64;
    let chw = (c * h * w) as u64;
    let mut f = FlopsBreakdown::default();

    let res_block = |f: &mut FlopsBreakdown| {
        f.conv += 2 * conv_flops(c, c, 3, h, w);
        f.other += chw * (COST_RELU + COST_ADD);
    };
    // spatial gate shared by the enhancement blocks and the feature encoder:
    // channel mean + max, 7x7 conv on the 2-channel stack, sigmoid, scale
    let spatial_gate = |f: &mut FlopsBreakdown| {
        f.other += 2 * chw * COST_REDUCE;
        f.conv += conv_flops(2, 1, 7, h, w);
        f.other += hw * COST_SIGMOID + chw * COST_MUL;
    };

    // feature extractor
    f.conv += conv_flops(3, c, 3, h, w);
    for _ in 0..config.blocks.extractor {
        res_block(&mut f);
    }

    // cascaded alignment: three normalized enhancement blocks plus the gate fusion
    for slot in 0..3 {
        f.other += chw * COST_LAYER_NORM;
        if slot > 0 {
            f.other += chw * COST_ADD; // cascade input sum
        }
        f.conv += 2 * conv_flops(c, c, 3, h, w);
        f.other += chw * COST_RELU; // leaky activation
        spatial_gate(&mut f);
        f.other += chw * COST_ADD; // residual
    }
    // gate fusion: two sigmoids, two products, one sum
    f.other += chw * (2 * COST_SIGMOID + 2 * COST_MUL + COST_ADD);

    // forward propagation
    f.conv += conv_flops(3 * c, c, 3, h, w);
    for _ in 0..config.blocks.propagation {
        res_block(&mut f);
    }

    // hidden updater (steady state; skipped only at the final frame)
    f.conv += conv_flops(3 * c, c, 1, h, w);
    f.other += chw * COST_REDUCE; // global average pool
    f.conv += conv_flops(c, rc, 1, 1, 1);
    f.other += rc as u64 * COST_RELU;
    f.conv += conv_flops(rc, c, 1, 1, 1);
    f.other += c as u64 * COST_SIGMOID;
    f.other += chw * COST_MUL; // channel scale
    spatial_gate(&mut f);
    f.other += chw * COST_ADD; // residual
    if config.ugru_variant == crate::model::UgruVariant::Split {
        f.conv += conv_flops(c, 3 * c, 1, h, w);
    }
    f.conv += 3 * conv_flops(c, c, 3, h, w);
    f.other += chw * (2 * COST_SIGMOID + COST_TANH);
    // gated combine: 1-w, z*h, *(1-w), q*w, sum
    f.other += chw * (3 * COST_MUL + COST_ADD + COST_ADD);

    // reconstruction
    f.conv += conv_flops(3 * c, c, 3, h, w);
    for _ in 0..config.blocks.reconstruction {
        res_block(&mut f);
    }
    let mut sh = h;
    let mut sw = w;
    for _ in 0..config.upsample_stages() {
        f.conv += conv_flops(c, 4 * c, 3, sh, sw);
        sh *= 2;
        sw *= 2;
    }
    f.conv += conv_flops(c, 3, 3, sh, sw);
    let out_elems = (3 * sh * sw) as u64;
    f.other += out_elems * (COST_BILINEAR + COST_ADD); // skip path and final sum

    f
}
