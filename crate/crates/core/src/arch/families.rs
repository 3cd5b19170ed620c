//! VGG16, ResNet50 and InceptionV3 topologies, full and desk-sized.

use super::{ArchError, ArchitectureConfig, DepthPreset, FeatureShape, Family, GraphBuilder, LayerGraph};
use crate::ops::Pair;

const RESNET_BN_EPS: f32 = 1e-5;
const INCEPTION_BN_EPS: f32 = 1e-3;

/// Smallest accepted input side regardless of what the graph could process:
/// 75 for the full inception topology, 32 everywhere else.
pub fn input_floor(config: &ArchitectureConfig) -> usize {
    match (config.family, config.preset) {
        (Family::InceptionV3, DepthPreset::Full) => 75,
        _ => 32,
    }
}

/// Builds and shape-validates the graph described by `config`.
pub fn build(config: &ArchitectureConfig) -> Result<LayerGraph, ArchError> {
    config.validate()?;
    let graph = topology(config)?;
    let floor = input_floor(config);
    let FeatureShape { c, h, w } = config.input_size;
    if h < floor || w < floor {
        return Err(ArchError::InputTooSmall {
            family: config.family,
            h,
            w,
            min: minimum_side(&graph, c).map_or(floor, |m| m.max(floor)),
        });
    }
    match graph.validate_shapes(config.input_size) {
        Ok(g) => Ok(g),
        Err(err @ ArchError::ShapeConflict { .. }) => match minimum_side(&graph, config.input_size.c) {
            Some(min) if config.input_size.h < min || config.input_size.w < min => Err(ArchError::InputTooSmall {
                family: config.family,
                h: config.input_size.h,
                w: config.input_size.w,
                min,
            }),
            _ => Err(err),
        },
        Err(e) => Err(e),
    }
}

/// Smallest square input side the graph accepts.
fn minimum_side(graph: &LayerGraph, channels: usize) -> Option<usize> {
    (1..=2048).find(|&s| graph.validate_shapes(FeatureShape::new(channels, s, s)).is_ok())
}

fn topology(config: &ArchitectureConfig) -> Result<LayerGraph, ArchError> {
    let scale = |c: usize| config.width_scale.apply(c);
    let mut b = GraphBuilder::new();
    let input = b.input_id();
    let body = match (config.family, config.preset) {
        (Family::Vgg16, DepthPreset::Full) => vgg(&mut b, &input, &[(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)], scale),
        (Family::Vgg16, DepthPreset::Desk) => vgg(&mut b, &input, &[(64, 2), (128, 2), (256, 2), (512, 2)], scale),
        (Family::Resnet50, DepthPreset::Full) => resnet(&mut b, &input, &[3, 4, 6, 3], scale),
        (Family::Resnet50, DepthPreset::Desk) => resnet(&mut b, &input, &[1, 1], scale),
        (Family::InceptionV3, DepthPreset::Full) => inception_full(&mut b, &input, scale),
        (Family::InceptionV3, DepthPreset::Desk) => inception_desk(&mut b, &input, scale),
    };
    b.finish_with_head(&body, config.num_classes)
}

fn vgg(b: &mut GraphBuilder, input: &str, blocks: &[(usize, usize)], scale: impl Fn(usize) -> usize) -> String {
    let mut x = input.to_string();
    for (bi, &(channels, convs)) in blocks.iter().enumerate() {
        let blk = bi + 1;
        for ci in 1..=convs {
            let c = b.conv(&format!("block{blk}_conv{ci}"), &x, scale(channels), (3, 3), (1, 1), (1, 1));
            x = b.relu(&format!("block{blk}_conv{ci}_relu"), &c);
        }
        x = b.max_pool(&format!("block{blk}_pool"), &x, (2, 2), (2, 2), (0, 0));
    }
    x
}

#[allow(clippy::too_many_arguments)]
fn conv_bn_relu(b: &mut GraphBuilder, id: &str, input: &str, out: usize, kernel: Pair, stride: Pair, padding: Pair, eps: f32) -> String {
    let c = b.conv(id, input, out, kernel, stride, padding);
    let n = b.batchnorm(&format!("{id}_bn"), &c, eps);
    b.relu(&format!("{id}_relu"), &n)
}

/// ResNet with bottleneck blocks (1×1 reduce, 3×3, 1×1 expand ×4). The
/// first block of each stage projects the shortcut; stride sits on the 3×3.
fn resnet(b: &mut GraphBuilder, input: &str, blocks_per_stage: &[usize], scale: impl Fn(usize) -> usize) -> String {
    let eps = RESNET_BN_EPS;
    let stem = conv_bn_relu(b, "conv1", input, scale(64), (7, 7), (2, 2), (3, 3), eps);
    let mut x = b.max_pool("pool1", &stem, (3, 3), (2, 2), (1, 1));
    for (si, &blocks) in blocks_per_stage.iter().enumerate() {
        let width = scale(64 << si);
        let out = scale(256 << si);
        for bi in 0..blocks {
            let stride = if si > 0 && bi == 0 { 2 } else { 1 };
            let p = format!("layer{}_{}", si + 1, bi);
            let a = conv_bn_relu(b, &format!("{p}_conv1"), &x, width, (1, 1), (1, 1), (0, 0), eps);
            let m = conv_bn_relu(b, &format!("{p}_conv2"), &a, width, (3, 3), (stride, stride), (1, 1), eps);
            let c = b.conv(&format!("{p}_conv3"), &m, out, (1, 1), (1, 1), (0, 0));
            let c = b.batchnorm(&format!("{p}_conv3_bn"), &c, eps);
            let shortcut = if bi == 0 {
                let d = b.conv(&format!("{p}_downsample"), &x, out, (1, 1), (stride, stride), (0, 0));
                b.batchnorm(&format!("{p}_downsample_bn"), &d, eps)
            } else {
                x.clone()
            };
            let sum = b.add(&format!("{p}_add"), &[&c, &shortcut]);
            x = b.relu(&format!("{p}_relu"), &sum);
        }
    }
    x
}

struct Inception<'a, F: Fn(usize) -> usize> {
    b: &'a mut GraphBuilder,
    scale: F,
}

impl<F: Fn(usize) -> usize> Inception<'_, F> {
    fn conv(&mut self, id: &str, input: &str, out: usize, kernel: Pair, stride: Pair, padding: Pair) -> String {
        let out = (self.scale)(out);
        conv_bn_relu(self.b, id, input, out, kernel, stride, padding, INCEPTION_BN_EPS)
    }

    fn stem(&mut self, input: &str, full: bool) -> String {
        let x = self.conv("conv1a", input, 32, (3, 3), (2, 2), (0, 0));
        let x = self.conv("conv2a", &x, 32, (3, 3), (1, 1), (0, 0));
        let x = self.conv("conv2b", &x, 64, (3, 3), (1, 1), (1, 1));
        let x = self.b.max_pool("pool1", &x, (3, 3), (2, 2), (0, 0));
        if !full {
            return x;
        }
        let x = self.conv("conv3b", &x, 80, (1, 1), (1, 1), (0, 0));
        let x = self.conv("conv4a", &x, 192, (3, 3), (1, 1), (0, 0));
        self.b.max_pool("pool2", &x, (3, 3), (2, 2), (0, 0))
    }

    /// 1×1 | 1×1→5×5 | 1×1→3×3→3×3 | avgpool→1×1
    fn block_a(&mut self, p: &str, x: &str, pool_features: usize) -> String {
        let b1 = self.conv(&format!("{p}_b1x1"), x, 64, (1, 1), (1, 1), (0, 0));
        let b5 = self.conv(&format!("{p}_b5x5_1"), x, 48, (1, 1), (1, 1), (0, 0));
        let b5 = self.conv(&format!("{p}_b5x5_2"), &b5, 64, (5, 5), (1, 1), (2, 2));
        let b3 = self.conv(&format!("{p}_b3x3dbl_1"), x, 64, (1, 1), (1, 1), (0, 0));
        let b3 = self.conv(&format!("{p}_b3x3dbl_2"), &b3, 96, (3, 3), (1, 1), (1, 1));
        let b3 = self.conv(&format!("{p}_b3x3dbl_3"), &b3, 96, (3, 3), (1, 1), (1, 1));
        let bp = self.b.avg_pool(&format!("{p}_pool"), x, (3, 3), (1, 1), (1, 1));
        let bp = self.conv(&format!("{p}_bpool"), &bp, pool_features, (1, 1), (1, 1), (0, 0));
        self.b.concat(p, &[&b1, &b5, &b3, &bp])
    }

    /// Grid reduction 35 → 17.
    fn block_b(&mut self, p: &str, x: &str) -> String {
        let b3 = self.conv(&format!("{p}_b3x3"), x, 384, (3, 3), (2, 2), (0, 0));
        let bd = self.conv(&format!("{p}_b3x3dbl_1"), x, 64, (1, 1), (1, 1), (0, 0));
        let bd = self.conv(&format!("{p}_b3x3dbl_2"), &bd, 96, (3, 3), (1, 1), (1, 1));
        let bd = self.conv(&format!("{p}_b3x3dbl_3"), &bd, 96, (3, 3), (2, 2), (0, 0));
        let bp = self.b.max_pool(&format!("{p}_pool"), x, (3, 3), (2, 2), (0, 0));
        self.b.concat(p, &[&b3, &bd, &bp])
    }

    /// Factorized 7×7 branches.
    fn block_c(&mut self, p: &str, x: &str, c7: usize) -> String {
        let b1 = self.conv(&format!("{p}_b1x1"), x, 192, (1, 1), (1, 1), (0, 0));
        let b7 = self.conv(&format!("{p}_b7x7_1"), x, c7, (1, 1), (1, 1), (0, 0));
        let b7 = self.conv(&format!("{p}_b7x7_2"), &b7, c7, (1, 7), (1, 1), (0, 3));
        let b7 = self.conv(&format!("{p}_b7x7_3"), &b7, 192, (7, 1), (1, 1), (3, 0));
        let bd = self.conv(&format!("{p}_b7x7dbl_1"), x, c7, (1, 1), (1, 1), (0, 0));
        let bd = self.conv(&format!("{p}_b7x7dbl_2"), &bd, c7, (7, 1), (1, 1), (3, 0));
        let bd = self.conv(&format!("{p}_b7x7dbl_3"), &bd, c7, (1, 7), (1, 1), (0, 3));
        let bd = self.conv(&format!("{p}_b7x7dbl_4"), &bd, c7, (7, 1), (1, 1), (3, 0));
        let bd = self.conv(&format!("{p}_b7x7dbl_5"), &bd, 192, (1, 7), (1, 1), (0, 3));
        let bp = self.b.avg_pool(&format!("{p}_pool"), x, (3, 3), (1, 1), (1, 1));
        let bp = self.conv(&format!("{p}_bpool"), &bp, 192, (1, 1), (1, 1), (0, 0));
        self.b.concat(p, &[&b1, &b7, &bd, &bp])
    }

    /// Grid reduction 17 → 8.
    fn block_d(&mut self, p: &str, x: &str) -> String {
        let b3 = self.conv(&format!("{p}_b3x3_1"), x, 192, (1, 1), (1, 1), (0, 0));
        let b3 = self.conv(&format!("{p}_b3x3_2"), &b3, 320, (3, 3), (2, 2), (0, 0));
        let b7 = self.conv(&format!("{p}_b7x7x3_1"), x, 192, (1, 1), (1, 1), (0, 0));
        let b7 = self.conv(&format!("{p}_b7x7x3_2"), &b7, 192, (1, 7), (1, 1), (0, 3));
        let b7 = self.conv(&format!("{p}_b7x7x3_3"), &b7, 192, (7, 1), (1, 1), (3, 0));
        let b7 = self.conv(&format!("{p}_b7x7x3_4"), &b7, 192, (3, 3), (2, 2), (0, 0));
        let bp = self.b.max_pool(&format!("{p}_pool"), x, (3, 3), (2, 2), (0, 0));
        self.b.concat(p, &[&b3, &b7, &bp])
    }

    /// Expanded filter bank with split 1×3 / 3×1 outputs.
    fn block_e(&mut self, p: &str, x: &str) -> String {
        let b1 = self.conv(&format!("{p}_b1x1"), x, 320, (1, 1), (1, 1), (0, 0));
        let b3 = self.conv(&format!("{p}_b3x3_1"), x, 384, (1, 1), (1, 1), (0, 0));
        let b3a = self.conv(&format!("{p}_b3x3_2a"), &b3, 384, (1, 3), (1, 1), (0, 1));
        let b3b = self.conv(&format!("{p}_b3x3_2b"), &b3, 384, (3, 1), (1, 1), (1, 0));
        let b3 = self.b.concat(&format!("{p}_b3x3"), &[&b3a, &b3b]);
        let bd = self.conv(&format!("{p}_b3x3dbl_1"), x, 448, (1, 1), (1, 1), (0, 0));
        let bd = self.conv(&format!("{p}_b3x3dbl_2"), &bd, 384, (3, 3), (1, 1), (1, 1));
        let bda = self.conv(&format!("{p}_b3x3dbl_3a"), &bd, 384, (1, 3), (1, 1), (0, 1));
        let bdb = self.conv(&format!("{p}_b3x3dbl_3b"), &bd, 384, (3, 1), (1, 1), (1, 0));
        let bd = self.b.concat(&format!("{p}_b3x3dbl"), &[&bda, &bdb]);
        let bp = self.b.avg_pool(&format!("{p}_pool"), x, (3, 3), (1, 1), (1, 1));
        let bp = self.conv(&format!("{p}_bpool"), &bp, 192, (1, 1), (1, 1), (0, 0));
        self.b.concat(p, &[&b1, &b3, &bd, &bp])
    }
}

fn inception_full(b: &mut GraphBuilder, input: &str, scale: impl Fn(usize) -> usize) -> String {
    let mut inc = Inception { b, scale };
    let x = inc.stem(input, true);
    let x = inc.block_a("mixed5b", &x, 32);
    let x = inc.block_a("mixed5c", &x, 64);
    let x = inc.block_a("mixed5d", &x, 64);
    let x = inc.block_b("mixed6a", &x);
    let x = inc.block_c("mixed6b", &x, 128);
    let x = inc.block_c("mixed6c", &x, 160);
    let x = inc.block_c("mixed6d", &x, 160);
    let x = inc.block_c("mixed6e", &x, 192);
    let x = inc.block_d("mixed7a", &x);
    let x = inc.block_e("mixed7b", &x);
    inc.block_e("mixed7c", &x)
}

fn inception_desk(b: &mut GraphBuilder, input: &str, scale: impl Fn(usize) -> usize) -> String {
    let mut inc = Inception { b, scale };
    let x = inc.stem(input, false);
    inc.block_a("mixed5b", &x, 32)
}
