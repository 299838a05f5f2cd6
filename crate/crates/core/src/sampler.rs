//! Per-view quadtrees with error-driven adaptive subdivision.
//!
//! Each training view owns a quadtree whose leaves partition its pixels.
//! Every epoch a leaf contributes rays: unmarked leaves get one draw per
//! pixel (a prior-weighted share plus a uniform share), marked leaves get
//! a small constant number. At epoch boundaries each unmarked leaf either
//! gets marked (its average rendering error fell below the threshold —
//! it is converged and permanently left aside) or splits into four
//! children that localize where the remaining error lives.

mod alias;

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::sync::OnceLock;
use thiserror::Error;

use crate::imaging::{Image, ProbabilityMap};
use crate::vec3::Vec3;
pub use alias::AliasTable;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("{height}x{width} image cannot hold a depth-{depth} quadtree")]
    ImageTooSmall { height: u32, width: u32, depth: u32 },
    #[error("draw at ({u}, {v}) lies outside the {height}x{width} image")]
    DrawOutsideImage { u: u32, v: u32, height: u32, width: u32 },
    #[error("probability map is {got_h}x{got_w} but the tree covers {want_h}x{want_w}")]
    ProbDimensionMismatch { got_h: u32, got_w: u32, want_h: u32, want_w: u32 },
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
}

/// Half-open pixel rectangle: rows [u0, u1), columns [v0, v1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub u0: u32,
    pub u1: u32,
    pub v0: u32,
    pub v1: u32,
}

impl PixelRect {
    pub fn height(&self) -> u32 {
        self.u1 - self.u0
    }

    pub fn width(&self) -> u32 {
        self.v1 - self.v0
    }

    pub fn area(&self) -> u64 {
        self.height() as u64 * self.width() as u64
    }

    pub fn contains(&self, u: u32, v: u32) -> bool {
        u >= self.u0 && u < self.u1 && v >= self.v0 && v < self.v1
    }

    /// Quadrant split with ceil/floor bounds; the first child keeps the
    /// larger half on odd extents.
    pub fn split_quad(&self) -> [PixelRect; 4] {
        let um = self.u0 + self.height().div_ceil(2);
        let vm = self.v0 + self.width().div_ceil(2);
        [
            PixelRect { u0: self.u0, u1: um, v0: self.v0, v1: vm },
            PixelRect { u0: self.u0, u1: um, v0: vm, v1: self.v1 },
            PixelRect { u0: um, u1: self.u1, v0: self.v0, v1: vm },
            PixelRect { u0: um, u1: self.u1, v0: vm, v1: self.v1 },
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeState {
    Internal,
    Unmarked,
    Marked,
}

#[derive(Debug)]
pub struct QuadNode {
    bounds: PixelRect,
    depth: u32,
    state: NodeState,
    children: Vec<QuadNode>,
    err_sum: f64,
    err_count: u64,
    alias: OnceLock<AliasTable>,
}

impl QuadNode {
    fn leaf(bounds: PixelRect, depth: u32) -> QuadNode {
        QuadNode {
            bounds,
            depth,
            state: NodeState::Unmarked,
            children: Vec::new(),
            err_sum: 0.0,
            err_count: 0,
            alias: OnceLock::new(),
        }
    }

    pub fn bounds(&self) -> PixelRect {
        self.bounds
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn state(&self) -> NodeState {
        self.state
    }

    /// Mean recorded error, if any rays landed here this epoch.
    pub fn mean_error(&self) -> Option<f64> {
        (self.err_count > 0).then(|| self.err_sum / self.err_count as f64)
    }

    pub fn recorded_rays(&self) -> u64 {
        self.err_count
    }

    fn split_into_children(&mut self) {
        debug_assert_eq!(self.state, NodeState::Unmarked);
        self.children = self
            .bounds
            .split_quad()
            .into_iter()
            .map(|b| QuadNode::leaf(b, self.depth + 1))
            .collect();
        self.state = NodeState::Internal;
        self.alias = OnceLock::new();
    }

    fn for_each_leaf<'a>(&'a self, f: &mut impl FnMut(&'a QuadNode)) {
        if self.state == NodeState::Internal {
            for child in &self.children {
                child.for_each_leaf(f);
            }
        } else {
            f(self);
        }
    }

    fn for_each_leaf_mut(&mut self, f: &mut impl FnMut(&mut QuadNode)) {
        if self.state == NodeState::Internal {
            for child in &mut self.children {
                child.for_each_leaf_mut(f);
            }
        } else {
            f(self);
        }
    }

    fn leaf_containing_mut(&mut self, u: u32, v: u32) -> &mut QuadNode {
        debug_assert!(self.bounds.contains(u, v));
        if self.state != NodeState::Internal {
            return self;
        }
        let idx = self
            .children
            .iter()
            .position(|c| c.bounds.contains(u, v))
            .expect("children partition the parent");
        self.children[idx].leaf_containing_mut(u, v)
    }
}

/// Knobs of the adaptive sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Fraction of each unmarked leaf's rays drawn uniformly instead of
    /// from the prior.
    pub random_ratio: f64,
    /// Rays per marked leaf per epoch.
    pub n0: u32,
    /// Mean-error threshold below which a leaf is marked.
    pub threshold: f64,
    /// Initial full subdivision depth of every tree.
    pub init_depth: u32,
    /// Subdivide all trees after every this many epochs.
    pub subdivide_every: u32,
    /// Replace the final epoch's draws with one ray per pixel.
    pub all_pixel_last_epoch: bool,
    pub seed: u64,
    /// Leaves whose children would fall below this many pixels per side
    /// stay undivided. The default of 4 keeps every leaf at 16+ pixels,
    /// which is above n0 = 10, so marking a leaf always shrinks the ray
    /// budget.
    #[serde(default = "default_min_node_size")]
    pub min_node_size: u32,
}

fn default_min_node_size() -> u32 {
    4
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            random_ratio: 0.5,
            n0: 10,
            threshold: 1e-3,
            init_depth: 2,
            subdivide_every: 3,
            all_pixel_last_epoch: true,
            seed: 0,
            min_node_size: default_min_node_size(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let mut problems = Vec::new();
        if !(0.0..=1.0).contains(&self.random_ratio) {
            problems.push(format!("random_ratio must be in [0,1], got {}", self.random_ratio));
        }
        if self.n0 == 0 {
            problems.push("n0 must be positive".into());
        }
        if self.threshold.is_nan() || self.threshold < 0.0 {
            problems.push(format!("threshold must be a nonnegative real, got {}", self.threshold));
        }
        if self.subdivide_every == 0 {
            problems.push("subdivide_every must be positive".into());
        }
        if self.min_node_size == 0 {
            problems.push("min_node_size must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SamplerError::InvalidConfig(problems.join("; ")))
        }
    }
}

/// One requested training ray: a pixel of a view, plus whether it came
/// from a marked leaf (those get only the constant allowance).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelDraw {
    pub view: usize,
    pub u: u32,
    pub v: u32,
    pub from_marked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubdivisionAction {
    Marked,
    Split,
    KeptMinSize,
    KeptNoData,
}

#[derive(Debug, Clone, Copy)]
pub struct SubdivisionDecision {
    pub bounds: PixelRect,
    pub depth: u32,
    pub mean_error: Option<f64>,
    pub action: SubdivisionAction,
}

/// Per-epoch ray accounting of one tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RayBudget {
    /// One ray per pixel of every unmarked leaf.
    pub unmarked_rays: u64,
    /// n0 rays per marked leaf.
    pub marked_rays: u64,
    pub unmarked_leaves: u64,
    pub marked_leaves: u64,
}

impl RayBudget {
    pub fn total(&self) -> u64 {
        self.unmarked_rays + self.marked_rays
    }
}

/// The per-view quadtree.
#[derive(Debug)]
pub struct QuadTree {
    view: usize,
    root: QuadNode,
    threshold: f64,
    n0: u32,
    min_node_size: u32,
    height: u32,
    width: u32,
}

impl QuadTree {
    /// Builds the tree fully subdivided to `config.init_depth`, all
    /// leaves unmarked. Odd extents split ceil/floor.
    pub fn new(
        view: usize,
        height: u32,
        width: u32,
        config: &SamplerConfig,
    ) -> Result<QuadTree, SamplerError> {
        let min_side = 1u32 << config.init_depth;
        if height < min_side || width < min_side {
            return Err(SamplerError::ImageTooSmall {
                height,
                width,
                depth: config.init_depth,
            });
        }
        let mut root = QuadNode::leaf(PixelRect { u0: 0, u1: height, v0: 0, v1: width }, 0);
        for _ in 0..config.init_depth {
            root.for_each_leaf_mut(&mut |leaf| leaf.split_into_children());
        }
        Ok(QuadTree {
            view,
            root,
            threshold: config.threshold,
            n0: config.n0,
            min_node_size: config.min_node_size,
            height,
            width,
        })
    }

    pub fn view(&self) -> usize {
        self.view
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn leaves(&self) -> Vec<&QuadNode> {
        let mut out = Vec::new();
        self.root.for_each_leaf(&mut |leaf| out.push(leaf));
        out
    }

    /// Draws this epoch's rays. Every unmarked leaf yields exactly one
    /// draw per pixel: `ceil((1 - random_ratio) * |F|)` from the prior
    /// restricted to the leaf, the rest uniform, all with replacement.
    /// Marked leaves yield `n0` uniform draws regardless of size.
    pub fn sample_epoch_rays(
        &self,
        prob: &ProbabilityMap,
        config: &SamplerConfig,
        rng: &mut impl Rng,
    ) -> Result<Vec<PixelDraw>, SamplerError> {
        if prob.height() != self.height || prob.width() != self.width {
            return Err(SamplerError::ProbDimensionMismatch {
                got_h: prob.height(),
                got_w: prob.width(),
                want_h: self.height,
                want_w: self.width,
            });
        }
        let mut draws = Vec::new();
        for leaf in self.leaves() {
            let b = leaf.bounds();
            match leaf.state() {
                NodeState::Marked => {
                    for _ in 0..self.n0 {
                        draws.push(PixelDraw {
                            view: self.view,
                            u: rng.gen_range(b.u0..b.u1),
                            v: rng.gen_range(b.v0..b.v1),
                            from_marked: true,
                        });
                    }
                }
                NodeState::Unmarked => {
                    let area = b.area();
                    let weighted =
                        (((1.0 - config.random_ratio) * area as f64).ceil() as u64).min(area);
                    if weighted > 0 {
                        let table = leaf.alias.get_or_init(|| {
                            let mut weights = Vec::with_capacity(area as usize);
                            for u in b.u0..b.u1 {
                                for v in b.v0..b.v1 {
                                    weights.push(prob.get(u, v));
                                }
                            }
                            AliasTable::new(&weights)
                        });
                        for _ in 0..weighted {
                            let local = table.sample(rng) as u32;
                            draws.push(PixelDraw {
                                view: self.view,
                                u: b.u0 + local / b.width(),
                                v: b.v0 + local % b.width(),
                                from_marked: false,
                            });
                        }
                    }
                    for _ in weighted..area {
                        draws.push(PixelDraw {
                            view: self.view,
                            u: rng.gen_range(b.u0..b.u1),
                            v: rng.gen_range(b.v0..b.v1),
                            from_marked: false,
                        });
                    }
                }
                NodeState::Internal => unreachable!("leaves() yields no internal nodes"),
            }
        }
        Ok(draws)
    }

    /// Adds one trained ray's loss to the leaf containing its pixel.
    pub fn record_error(&mut self, u: u32, v: u32, loss: f64) -> Result<(), SamplerError> {
        if u >= self.height || v >= self.width {
            return Err(SamplerError::DrawOutsideImage {
                u,
                v,
                height: self.height,
                width: self.width,
            });
        }
        let leaf = self.root.leaf_containing_mut(u, v);
        leaf.err_sum += loss;
        leaf.err_count += 1;
        Ok(())
    }

    pub fn clear_errors(&mut self) {
        self.root.for_each_leaf_mut(&mut |leaf| {
            leaf.err_sum = 0.0;
            leaf.err_count = 0;
        });
    }

    /// The epoch-boundary update. Every unmarked leaf with recorded rays
    /// is either marked (mean error below the threshold; permanent) or
    /// split into four children, except that splits violating the
    /// minimum node size are skipped. Leaves nobody sampled stay as they
    /// are. All error accumulators reset.
    pub fn subdivide(&mut self) -> Vec<SubdivisionDecision> {
        let mut report = Vec::new();
        let threshold = self.threshold;
        let min_size = self.min_node_size;
        Self::subdivide_node(&mut self.root, threshold, min_size, &mut report);
        report
    }

    fn subdivide_node(
        node: &mut QuadNode,
        threshold: f64,
        min_size: u32,
        report: &mut Vec<SubdivisionDecision>,
    ) {
        match node.state {
            NodeState::Internal => {
                for child in &mut node.children {
                    Self::subdivide_node(child, threshold, min_size, report);
                }
            }
            NodeState::Marked => {
                node.err_sum = 0.0;
                node.err_count = 0;
            }
            NodeState::Unmarked => {
                let mean = node.mean_error();
                let action = match mean {
                    None => SubdivisionAction::KeptNoData,
                    Some(e) if e < threshold => SubdivisionAction::Marked,
                    Some(_) => {
                        let b = node.bounds;
                        if b.height() / 2 < min_size || b.width() / 2 < min_size {
                            SubdivisionAction::KeptMinSize
                        } else {
                            SubdivisionAction::Split
                        }
                    }
                };
                report.push(SubdivisionDecision {
                    bounds: node.bounds,
                    depth: node.depth,
                    mean_error: mean,
                    action,
                });
                node.err_sum = 0.0;
                node.err_count = 0;
                match action {
                    SubdivisionAction::Marked => {
                        node.state = NodeState::Marked;
                        node.alias = OnceLock::new();
                    }
                    SubdivisionAction::Split => node.split_into_children(),
                    _ => {}
                }
            }
        }
    }

    /// Rays the next epoch will cost: one per unmarked-leaf pixel plus
    /// n0 per marked leaf.
    pub fn ray_budget(&self) -> RayBudget {
        let mut budget = RayBudget {
            unmarked_rays: 0,
            marked_rays: 0,
            unmarked_leaves: 0,
            marked_leaves: 0,
        };
        self.root.for_each_leaf(&mut |leaf| match leaf.state() {
            NodeState::Unmarked => {
                budget.unmarked_rays += leaf.bounds().area();
                budget.unmarked_leaves += 1;
            }
            NodeState::Marked => {
                budget.marked_rays += self.n0 as u64;
                budget.marked_leaves += 1;
            }
            NodeState::Internal => unreachable!(),
        });
        budget
    }

    /// Leaf layout and per-leaf statistics as CSV.
    pub fn layout_csv(&self) -> String {
        let mut out = String::from("view,depth,u0,v0,u1,v1,state,e_f,draws\n");
        self.root.for_each_leaf(&mut |leaf| {
            let b = leaf.bounds();
            let state = match leaf.state() {
                NodeState::Unmarked => "unmarked",
                NodeState::Marked => "marked",
                NodeState::Internal => unreachable!(),
            };
            let e_f = leaf.mean_error().map(|e| e.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                self.view,
                leaf.depth(),
                b.u0,
                b.v0,
                b.u1,
                b.v1,
                state,
                e_f,
                leaf.recorded_rays()
            )
            .expect("write to string");
        });
        out
    }

    /// Ground-truth image with one red dot per sampled ray.
    pub fn scatter_overlay(base: &Image, draws: &[PixelDraw]) -> Image {
        let mut img = base.clone();
        for d in draws {
            img.set(d.u, d.v, Vec3::new(1.0, 0.0, 0.0));
        }
        img
    }

    /// Per-leaf error heatmap: light green for small mean error, dark
    /// saturated green for large.
    pub fn error_overlay(&self) -> Image {
        let max_err = self
            .leaves()
            .iter()
            .filter_map(|l| l.mean_error())
            .fold(0.0f64, f64::max);
        let mut img = Image::constant(self.width, self.height, Vec3::ONE);
        self.root.for_each_leaf(&mut |leaf| {
            let b = leaf.bounds();
            let intensity = match leaf.mean_error() {
                Some(e) if max_err > 0.0 => e / max_err,
                _ => 0.0,
            };
            let light = Vec3::new(0.85, 1.0, 0.85);
            let dark = Vec3::new(0.0, 0.35, 0.0);
            let color = light * (1.0 - intensity) + dark * intensity;
            for u in b.u0..b.u1 {
                for v in b.v0..b.v1 {
                    img.set(u, v, color);
                }
            }
        });
        img
    }
}
