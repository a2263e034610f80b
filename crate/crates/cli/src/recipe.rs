use nalgebra::Vector3;
use serde::Deserialize;
use treereg_core::synth::{PairSpec, TreeSpec};
use treereg_core::RigidTransform;

/// Synthetic pair recipe as written in TOML files.
///
/// ```toml
/// rotation_deg = 120.0
/// translation = [1.5, -1.0, 0.3]
///
/// [tree]
/// seed = 7
/// branching_depth = 3
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairRecipe {
    pub tree: TreeSpec,
    /// Axis of the target scan's rotation relative to the source scan.
    pub rotation_axis: [f64; 3],
    pub rotation_deg: f64,
    pub translation: [f64; 3],
    pub noise_sigma: f64,
    pub occlusion_fraction: f64,
    pub scan_seed: u64,
}

impl Default for PairRecipe {
    fn default() -> Self {
        let spec = PairSpec::default();
        Self {
            tree: TreeSpec::default(),
            rotation_axis: [0.0, 0.0, 1.0],
            rotation_deg: 0.0,
            translation: [0.0; 3],
            noise_sigma: spec.noise_sigma,
            occlusion_fraction: spec.occlusion_fraction,
            scan_seed: spec.scan_seed,
        }
    }
}

impl PairRecipe {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.tree.seed = seed;
        self.scan_seed = seed;
        self
    }

    pub fn to_spec(&self) -> treereg_core::Result<PairSpec> {
        let axis = Vector3::from(self.rotation_axis);
        let transform = if self.rotation_deg == 0.0 {
            RigidTransform::from_translation(self.translation.into())
        } else if axis.norm() > 0.0 {
            RigidTransform::from_axis_angle(axis, self.rotation_deg.to_radians(), self.translation.into())
        } else {
            return Err(treereg_core::Error::InvalidParameter {
                name: "rotation_axis",
                reason: "must be nonzero".into(),
            });
        };
        Ok(PairSpec {
            tree: self.tree,
            transform,
            noise_sigma: self.noise_sigma,
            occlusion_fraction: self.occlusion_fraction,
            scan_seed: self.scan_seed,
        })
    }
}
