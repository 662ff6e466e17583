//! The residual backbone, cross-domain networks with a shared trunk, and
//! transfer of the trunk into a fresh target network.
//!
//! Topology of one branch (every convolution is "same"-padded):
//!
//! ```text
//! input (bands, p, p)
//!   ├─ C1x1 ─┐
//!   ├─ C3x3 ─┼─ concat (3F) ─ C2 (1x1, F)
//!   └─ C5x5 ─┘
//!   ─ res1 ─ res2 ─ … ─ resR          (shared across branches)
//!   ─ C7 ─ dropout ─ C8 ─ dropout ─ C9 (1x1, classes) ─ centre pixel
//! ```
//!
//! BN + ReLU follow every convolution except C9. A residual module is
//! `relu(x + bn(conv(relu(bn(conv(x))))))`.

mod checkpoint;
pub mod gradcheck;
mod layers;
mod model;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use checkpoint::{
    load_checkpoint, load_cross_domain, read_checkpoint, save_checkpoint, save_cross_domain,
    write_checkpoint, CheckpointData, CheckpointKind, NamedTensor, Resumable, CHECKPOINT_VERSION,
};
pub use layers::{ConvBn, ParamVisitor, ResModule};
pub use model::{
    build_backbone, build_cross_domain, init_weights, transfer_shared, Branch, BranchMut,
    BranchRef, BranchTape, CrossDomainNetwork, Mode, Network,
};

/// Standard deviation of the Gaussian initialisation for the input-side
/// layers and the classifier.
pub const INIT_STD_OUTER: f64 = 0.01;
/// Standard deviation for the residual modules, C7 and C8.
pub const INIT_STD_INNER: f64 = 0.005;

fn default_patch() -> usize {
    5
}
fn default_filters() -> usize {
    128
}
fn default_residual_modules() -> usize {
    2
}
fn default_dropout() -> f64 {
    0.5
}

/// Architecture of one backbone branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub bands: usize,
    pub classes: usize,
    #[serde(default = "default_patch")]
    pub patch: usize,
    #[serde(default = "default_filters")]
    pub filters: usize,
    #[serde(default = "default_residual_modules")]
    pub residual_modules: usize,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
}

impl NetworkSpec {
    pub fn new(bands: usize, classes: usize) -> Self {
        Self {
            bands,
            classes,
            patch: default_patch(),
            filters: default_filters(),
            residual_modules: default_residual_modules(),
            dropout_rate: default_dropout(),
        }
    }

    pub fn with_filters(mut self, filters: usize) -> Self {
        self.filters = filters;
        self
    }

    pub fn with_patch(mut self, patch: usize) -> Self {
        self.patch = patch;
        self
    }

    pub fn with_residual_modules(mut self, rm: usize) -> Self {
        self.residual_modules = rm;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.bands == 0 {
            return fail("bands must be ≥ 1".into());
        }
        if self.classes < 2 {
            return fail(format!("classes must be ≥ 2, got {}", self.classes));
        }
        if self.patch == 0 || self.patch % 2 == 0 {
            return fail(format!("patch must be odd and ≥ 1, got {}", self.patch));
        }
        if self.filters == 0 {
            return fail("filters must be ≥ 1".into());
        }
        if self.residual_modules < 2 {
            return fail(format!(
                "residual_modules must be ≥ 2, got {}",
                self.residual_modules
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        Ok(())
    }

    /// Weighted layers counting the filter bank as one: `5 + 2·R`.
    pub fn weighted_layers(&self) -> usize {
        5 + 2 * self.residual_modules
    }

    /// Trainable parameters of the branch-private layers (bank, C2, C7–C9).
    pub fn private_param_count(&self) -> usize {
        let f = self.filters;
        let b = self.bands;
        let conv_bn = |o: usize, i: usize, k: usize| o * i * k * k + o + 2 * o;
        conv_bn(f, b, 1)
            + conv_bn(f, b, 3)
            + conv_bn(f, b, 5)
            + conv_bn(f, 3 * f, 1)
            + 2 * conv_bn(f, f, 1)
            + (self.classes * f + self.classes)
    }

    /// Trainable parameters of the residual trunk.
    pub fn shared_param_count(&self) -> usize {
        let f = self.filters;
        self.residual_modules * 2 * (f * f + f + 2 * f)
    }

    pub fn param_count(&self) -> usize {
        self.private_param_count() + self.shared_param_count()
    }
}

/// One source branch per dataset; all branches share the residual trunk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainSpec {
    pub branches: Vec<NetworkSpec>,
}

impl CrossDomainSpec {
    pub fn new(branches: Vec<NetworkSpec>) -> Self {
        Self { branches }
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .branches
            .first()
            .ok_or_else(|| Error::Config("cross-domain spec needs at least one branch".into()))?;
        for (i, b) in self.branches.iter().enumerate() {
            b.validate()?;
            if (b.filters, b.patch, b.residual_modules)
                != (first.filters, first.patch, first.residual_modules)
            {
                return Err(Error::Config(format!(
                    "branch {i} disagrees with branch 0 on filters/patch/residual_modules: \
                     ({}, {}, {}) vs ({}, {}, {})",
                    b.filters,
                    b.patch,
                    b.residual_modules,
                    first.filters,
                    first.patch,
                    first.residual_modules
                )));
            }
        }
        Ok(())
    }

    pub fn residual_modules(&self) -> usize {
        self.branches[0].residual_modules
    }

    pub fn filters(&self) -> usize {
        self.branches[0].filters
    }

    /// Physical parameter count: every branch's private layers plus one trunk.
    pub fn physical_param_count(&self) -> usize {
        self.branches
            .iter()
            .map(NetworkSpec::private_param_count)
            .sum::<usize>()
            + self.branches[0].shared_param_count()
    }
}

/// Identity of a weighted layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerName {
    C1x1,
    C3x3,
    C5x5,
    C2,
    /// 1-based module and conv index.
    Res { module: usize, conv: usize },
    C7,
    C8,
    C9,
}

impl LayerName {
    /// Only the residual modules are shared and transferred.
    pub fn is_shared(self) -> bool {
        matches!(self, LayerName::Res { .. })
    }

    pub fn init_std(self) -> f64 {
        match self {
            LayerName::C1x1 | LayerName::C3x3 | LayerName::C5x5 | LayerName::C2 | LayerName::C9 => {
                INIT_STD_OUTER
            }
            LayerName::Res { .. } | LayerName::C7 | LayerName::C8 => INIT_STD_INNER,
        }
    }
}

impl fmt::Display for LayerName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerName::C1x1 => f.write_str("c1x1"),
            LayerName::C3x3 => f.write_str("c3x3"),
            LayerName::C5x5 => f.write_str("c5x5"),
            LayerName::C2 => f.write_str("c2"),
            LayerName::Res { module, conv } => write!(f, "res{module}.conv{conv}"),
            LayerName::C7 => f.write_str("c7"),
            LayerName::C8 => f.write_str("c8"),
            LayerName::C9 => f.write_str("c9"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
}

impl ParamKind {
    /// Weight decay applies to everything except convolution biases.
    pub fn decays(self) -> bool {
        !matches!(self, ParamKind::Bias)
    }

    pub fn suffix(self) -> &'static str {
        match self {
            ParamKind::Weight => "weight",
            ParamKind::Bias => "bias",
            ParamKind::BnScale => "bn.scale",
            ParamKind::BnShift => "bn.shift",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamInfo {
    pub layer: LayerName,
    pub kind: ParamKind,
}

impl ParamInfo {
    pub fn shared(&self) -> bool {
        self.layer.is_shared()
    }

    pub fn name(&self) -> String {
        format!("{}.{}", self.layer, self.kind.suffix())
    }
}


#[cfg(test)]
mod model_tests;
