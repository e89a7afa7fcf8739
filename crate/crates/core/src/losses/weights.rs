//! Every weight, decay rate and threshold of the objective. Fields left
//! out of a JSON profile take their library default, which is 1 unless a
//! specific value is documented on the field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{joints as J, keypoints as K, NUM_JOINTS};

/// Tuned profile shipped with the fitting command.
pub const DEFAULT_PROFILE_JSON: &str = include_str!("../../profiles/default.json");

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    #[serde(default = "one")]
    pub lambda_j: f64,
    #[serde(default = "one")]
    pub lambda_p: f64,
    #[serde(default = "one")]
    pub lambda_sm: f64,
    #[serde(default = "one")]
    pub lambda_cons: f64,
    #[serde(default = "one")]
    pub lambda_bc: f64,
    #[serde(default = "one")]
    pub lambda_g: f64,
    #[serde(default = "one")]
    pub lambda_sc: f64,
    #[serde(default)]
    pub reprojection: ReprojectionWeights,
    #[serde(default)]
    pub pose: PoseWeights,
    #[serde(default)]
    pub shape: ShapeWeights,
    #[serde(default)]
    pub torso: TorsoWeights,
    #[serde(default)]
    pub smooth: SmoothWeights,
    #[serde(default)]
    pub consistency: ConsistencyWeights,
    #[serde(default)]
    pub bed: BedWeights,
    #[serde(default)]
    pub gravity: GravityWeights,
    #[serde(default)]
    pub self_contact: SelfContactWeights,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_j: 1.0,
            lambda_p: 1.0,
            lambda_sm: 1.0,
            lambda_cons: 1.0,
            lambda_bc: 1.0,
            lambda_g: 1.0,
            lambda_sc: 1.0,
            reprojection: Default::default(),
            pose: Default::default(),
            shape: Default::default(),
            torso: Default::default(),
            smooth: Default::default(),
            consistency: Default::default(),
            bed: Default::default(),
            gravity: Default::default(),
            self_contact: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReprojectionWeights {
    /// Geman-McClure scale in pixels (default 100).
    pub sigma: f64,
}

impl Default for ReprojectionWeights {
    fn default() -> Self {
        ReprojectionWeights { sigma: 100.0 }
    }
}

/// `lambda2 * exp(gamma * theta[joint][axis])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BendPenalty {
    pub joint: usize,
    pub axis: usize,
    pub lambda2: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseWeights {
    #[serde(default = "one")]
    pub lambda1: f64,
    #[serde(default = "default_bending")]
    pub bending: Vec<BendPenalty>,
}

impl Default for PoseWeights {
    fn default() -> Self {
        PoseWeights {
            lambda1: 1.0,
            bending: default_bending(),
        }
    }
}

/// Hyperextension of elbows and knees. The left elbow flexes towards
/// negative z, the right one towards positive z; knees flex towards
/// positive x.
pub fn default_bending() -> Vec<BendPenalty> {
    let e = |joint, axis, gamma| BendPenalty {
        joint,
        axis,
        lambda2: 1.0,
        gamma,
    };
    vec![
        e(J::L_ELBOW, 2, 10.0),
        e(J::R_ELBOW, 2, -10.0),
        e(J::L_KNEE, 0, -10.0),
        e(J::R_KNEE, 0, -10.0),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeWeights {
    #[serde(default = "one")]
    pub lambda: f64,
}

impl Default for ShapeWeights {
    fn default() -> Self {
        ShapeWeights { lambda: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorsoWeights {
    #[serde(default = "one")]
    pub lambda1: f64,
    #[serde(default = "one")]
    pub lambda2: f64,
    /// Default 100 per meter.
    #[serde(default = "hundred")]
    pub omega_hip: f64,
    /// Default 100 per meter.
    #[serde(default = "hundred")]
    pub omega_wai: f64,
    /// Joint whose height is the waist height (default spine1).
    #[serde(default = "waist")]
    pub waist_joint: usize,
}

fn hundred() -> f64 {
    100.0
}

fn waist() -> usize {
    J::SPINE1
}

impl Default for TorsoWeights {
    fn default() -> Self {
        TorsoWeights {
            lambda1: 1.0,
            lambda2: 1.0,
            omega_hip: 100.0,
            omega_wai: 100.0,
            waist_joint: J::SPINE1,
        }
    }
}

/// `par1..3` weight first differences of beta, theta and trans; `vel1`
/// and `vel2` joint and vertex velocities; `acc` joint second differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothWeights {
    #[serde(default = "one")]
    pub lambda1_par: f64,
    #[serde(default = "one")]
    pub lambda2_par: f64,
    #[serde(default = "one")]
    pub lambda3_par: f64,
    #[serde(default = "one")]
    pub lambda1_vel: f64,
    #[serde(default = "one")]
    pub lambda2_vel: f64,
    #[serde(default = "one")]
    pub lambda_acc: f64,
}

impl Default for SmoothWeights {
    fn default() -> Self {
        SmoothWeights {
            lambda1_par: 1.0,
            lambda2_par: 1.0,
            lambda3_par: 1.0,
            lambda1_vel: 1.0,
            lambda2_vel: 1.0,
            lambda_acc: 1.0,
        }
    }
}

/// Theta, trans, vertex and joint differences on overlap frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyWeights {
    #[serde(default = "one")]
    pub lambda1: f64,
    #[serde(default = "one")]
    pub lambda2: f64,
    #[serde(default = "one")]
    pub lambda3: f64,
    #[serde(default = "one")]
    pub lambda4: f64,
}

impl Default for ConsistencyWeights {
    fn default() -> Self {
        ConsistencyWeights {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            lambda4: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BedWeights {
    #[serde(default = "one")]
    pub omega_in_bed: f64,
    #[serde(default = "one")]
    pub omega_out_bed: f64,
    #[serde(default = "one")]
    pub lambda_in_bed: f64,
    #[serde(default = "one")]
    pub lambda_out_bed: f64,
    /// Contact band above the plane in meters (default 0.02).
    #[serde(default = "two_cm")]
    pub thre_bed: f64,
}

fn two_cm() -> f64 {
    0.02
}

impl Default for BedWeights {
    fn default() -> Self {
        BedWeights {
            omega_in_bed: 1.0,
            omega_out_bed: 1.0,
            lambda_in_bed: 1.0,
            lambda_out_bed: 1.0,
            thre_bed: 0.02,
        }
    }
}

/// One gravity-constrained joint: the model joint whose height is
/// penalized, its 2D keypoint, and the keypoint at the other end of the
/// limb used for the foreshortening test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GravityJoint {
    pub joint: usize,
    pub keypoint: usize,
    pub limb_parent: usize,
    #[serde(default)]
    pub hand: bool,
}

/// Hands, elbows, knees and ankles.
pub fn default_gravity_joints() -> Vec<GravityJoint> {
    let g = |joint, keypoint, limb_parent, hand| GravityJoint {
        joint,
        keypoint,
        limb_parent,
        hand,
    };
    vec![
        g(J::L_HAND, K::L_HAND, K::L_ELBOW, true),
        g(J::R_HAND, K::R_HAND, K::R_ELBOW, true),
        g(J::L_ELBOW, K::L_ELBOW, K::L_SHOULDER, false),
        g(J::R_ELBOW, K::R_ELBOW, K::R_SHOULDER, false),
        g(J::L_KNEE, K::L_KNEE, K::L_HIP, false),
        g(J::R_KNEE, K::R_KNEE, K::R_HIP, false),
        g(J::L_ANKLE, K::L_ANKLE, K::L_KNEE, false),
        g(J::R_ANKLE, K::R_ANKLE, K::R_KNEE, false),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GravityWeights {
    /// Stationary threshold on 2D keypoint speed, pixels per frame
    /// (default sqrt(110)).
    #[serde(default = "thre_vel")]
    pub thre_vel: f64,
    /// Exponent rate per meter for an ordinary stationary joint (default 40).
    #[serde(default = "forty")]
    pub omega_full: f64,
    /// Rate for a foreshortened limb or a hand over the torso (default 4).
    #[serde(default = "four")]
    pub omega_reduced: f64,
    /// A limb shorter than this fraction of its rest projection counts as
    /// genuinely lifted (default 0.6).
    #[serde(default = "sixty_percent")]
    pub foreshortening: f64,
    #[serde(default = "default_gravity_joints")]
    pub joints: Vec<GravityJoint>,
}

fn thre_vel() -> f64 {
    110f64.sqrt()
}
fn forty() -> f64 {
    40.0
}
fn four() -> f64 {
    4.0
}
fn sixty_percent() -> f64 {
    0.6
}

impl Default for GravityWeights {
    fn default() -> Self {
        GravityWeights {
            thre_vel: thre_vel(),
            omega_full: 40.0,
            omega_reduced: 4.0,
            foreshortening: 0.6,
            joints: default_gravity_joints(),
        }
    }
}

/// `push_weight` and `pull_weight` scale the potential terms;
/// `lambda_push` and `lambda_pull` are their decay rates per meter of
/// center distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfContactWeights {
    #[serde(default = "one")]
    pub lambda_p_con: f64,
    #[serde(default = "one")]
    pub lambda_p_isect: f64,
    #[serde(default = "one")]
    pub omega_p_con: f64,
    #[serde(default = "one")]
    pub omega_p_isect: f64,
    #[serde(default = "one")]
    pub push_weight: f64,
    #[serde(default = "one")]
    pub pull_weight: f64,
    #[serde(default = "one")]
    pub lambda_push: f64,
    #[serde(default = "one")]
    pub lambda_pull: f64,
    /// Contact band in meters (default 0.02).
    #[serde(default = "two_cm")]
    pub thre_dist: f64,
}

impl Default for SelfContactWeights {
    fn default() -> Self {
        SelfContactWeights {
            lambda_p_con: 1.0,
            lambda_p_isect: 1.0,
            omega_p_con: 1.0,
            omega_p_isect: 1.0,
            push_weight: 1.0,
            pull_weight: 1.0,
            lambda_push: 1.0,
            lambda_pull: 1.0,
            thre_dist: 0.02,
        }
    }
}

impl LossWeights {
    /// Every top-level and internal weight zero; thresholds keep defaults.
    pub fn zeros() -> Self {
        let mut w = LossWeights::default();
        w.set_top_level(0.0);
        w
    }

    /// Only the named top-level term active with weight 1.
    pub fn only(term: super::Term) -> Self {
        let mut w = LossWeights::default();
        w.set_top_level(0.0);
        *w.top_level_mut(term) = 1.0;
        w
    }

    pub fn set_top_level(&mut self, value: f64) {
        for t in super::Term::ALL {
            *self.top_level_mut(t) = value;
        }
    }

    pub fn top_level(&self, term: super::Term) -> f64 {
        use super::Term::*;
        match term {
            Reprojection => self.lambda_j,
            Prior => self.lambda_p,
            Smooth => self.lambda_sm,
            Consistency => self.lambda_cons,
            BedContact => self.lambda_bc,
            Gravity => self.lambda_g,
            SelfContact => self.lambda_sc,
        }
    }

    pub fn top_level_mut(&mut self, term: super::Term) -> &mut f64 {
        use super::Term::*;
        match term {
            Reprojection => &mut self.lambda_j,
            Prior => &mut self.lambda_p,
            Smooth => &mut self.lambda_sm,
            Consistency => &mut self.lambda_cons,
            BedContact => &mut self.lambda_bc,
            Gravity => &mut self.lambda_g,
            SelfContact => &mut self.lambda_sc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |field: &str, v: f64| -> Result<()> {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(field, format!("must be finite and >= 0, got {v}")));
            }
            Ok(())
        };
        let positive = |field: &str, v: f64| -> Result<()> {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::config(field, format!("must be finite and > 0, got {v}")));
            }
            Ok(())
        };
        for t in super::Term::ALL {
            nonneg(t.weight_name(), self.top_level(t))?;
        }
        positive("reprojection.sigma", self.reprojection.sigma)?;
        nonneg("pose.lambda1", self.pose.lambda1)?;
        for (i, b) in self.pose.bending.iter().enumerate() {
            if b.joint >= NUM_JOINTS || b.axis >= 3 {
                return Err(Error::config(
                    format!("pose.bending[{i}]"),
                    format!("joint {} axis {} out of range", b.joint, b.axis),
                ));
            }
            nonneg(&format!("pose.bending[{i}].lambda2"), b.lambda2)?;
            if !b.gamma.is_finite() {
                return Err(Error::config(format!("pose.bending[{i}].gamma"), "must be finite"));
            }
        }
        nonneg("shape.lambda", self.shape.lambda)?;
        let t = &self.torso;
        nonneg("torso.lambda1", t.lambda1)?;
        nonneg("torso.lambda2", t.lambda2)?;
        nonneg("torso.omega_hip", t.omega_hip)?;
        nonneg("torso.omega_wai", t.omega_wai)?;
        if t.waist_joint >= NUM_JOINTS {
            return Err(Error::config("torso.waist_joint", "out of range"));
        }
        let s = &self.smooth;
        for (n, v) in [
            ("smooth.lambda1_par", s.lambda1_par),
            ("smooth.lambda2_par", s.lambda2_par),
            ("smooth.lambda3_par", s.lambda3_par),
            ("smooth.lambda1_vel", s.lambda1_vel),
            ("smooth.lambda2_vel", s.lambda2_vel),
            ("smooth.lambda_acc", s.lambda_acc),
        ] {
            nonneg(n, v)?;
        }
        let c = &self.consistency;
        for (n, v) in [
            ("consistency.lambda1", c.lambda1),
            ("consistency.lambda2", c.lambda2),
            ("consistency.lambda3", c.lambda3),
            ("consistency.lambda4", c.lambda4),
        ] {
            nonneg(n, v)?;
        }
        let b = &self.bed;
        nonneg("bed.omega_in_bed", b.omega_in_bed)?;
        nonneg("bed.omega_out_bed", b.omega_out_bed)?;
        nonneg("bed.lambda_in_bed", b.lambda_in_bed)?;
        nonneg("bed.lambda_out_bed", b.lambda_out_bed)?;
        positive("bed.thre_bed", b.thre_bed)?;
        let g = &self.gravity;
        positive("gravity.thre_vel", g.thre_vel)?;
        nonneg("gravity.omega_full", g.omega_full)?;
        nonneg("gravity.omega_reduced", g.omega_reduced)?;
        positive("gravity.foreshortening", g.foreshortening)?;
        for (i, j) in g.joints.iter().enumerate() {
            if j.joint >= NUM_JOINTS || j.keypoint >= K::COUNT || j.limb_parent >= K::COUNT {
                return Err(Error::config(format!("gravity.joints[{i}]"), "index out of range"));
            }
        }
        let sc = &self.self_contact;
        for (n, v) in [
            ("self_contact.lambda_p_con", sc.lambda_p_con),
            ("self_contact.lambda_p_isect", sc.lambda_p_isect),
            ("self_contact.omega_p_con", sc.omega_p_con),
            ("self_contact.omega_p_isect", sc.omega_p_isect),
            ("self_contact.push_weight", sc.push_weight),
            ("self_contact.pull_weight", sc.pull_weight),
            ("self_contact.lambda_push", sc.lambda_push),
            ("self_contact.lambda_pull", sc.lambda_pull),
        ] {
            nonneg(n, v)?;
        }
        positive("self_contact.thre_dist", sc.thre_dist)?;
        Ok(())
    }
}

/// Per-stage weights as stored in a profile file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightProfile {
    pub version: u32,
    pub stage1: LossWeights,
    pub stage2: LossWeights,
}

impl WeightProfile {
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_PROFILE_JSON, "<builtin profile>").expect("builtin profile parses")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let p: WeightProfile = serde_json::from_str(text).map_err(|e| Error::Json {
            path: origin.into(),
            message: e.to_string(),
        })?;
        p.stage1.validate()?;
        p.stage2.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("profile serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unspecified_fields_default_to_one_or_documented_value() {
        let w: LossWeights = serde_json::from_str("{}").unwrap();
        assert_eq!(w, LossWeights::default());
        assert_eq!(w.lambda_g, 1.0);
        assert_eq!(w.torso.omega_hip, 100.0);
        assert_eq!(w.bed.thre_bed, 0.02);
        assert_eq!(w.gravity.thre_vel, 110f64.sqrt());
        assert_eq!(w.gravity.joints.len(), 8);
    }

    #[test]
    fn unknown_field_is_rejected() {
        assert!(serde_json::from_str::<LossWeights>(r#"{"lambda_q": 1}"#).is_err());
    }

    #[test]
    fn negative_weight_names_the_field() {
        let mut w = LossWeights::default();
        w.bed.lambda_in_bed = -1.0;
        let e = w.validate().unwrap_err().to_string();
        assert!(e.contains("bed.lambda_in_bed"), "{e}");
    }

    #[test]
    fn builtin_profile_is_valid() {
        let p = WeightProfile::builtin();
        assert_eq!(p.version, 1);
    }
}
