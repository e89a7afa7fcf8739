//! The two-stage fitting objective.

pub mod gmm;
pub mod gravity;
pub mod terms;
pub mod weights;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::Result;
use crate::model::{BodyGrad, BodyModel, FrameParams, PosedBody, NUM_BETAS};
use crate::penetration::PenetrationReport;
use crate::segmentation::CenterSpec;

pub use gmm::GmmPrior;
pub use gravity::{gravity_loss, zero_velocity_flags, GravityFlags, JointFlag};
pub use terms::{
    bed_contact_loss, consistency_loss, pose_prior_loss, reprojection_loss, self_contact_loss,
    shape_prior_loss, smooth_loss, torso_prior_loss, OverlapFrame, SelfContactParts,
};
pub use weights::{LossWeights, WeightProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Reprojection,
    Prior,
    Smooth,
    Consistency,
    BedContact,
    Gravity,
    SelfContact,
}

impl Term {
    pub const ALL: [Term; 7] = [
        Term::Reprojection,
        Term::Prior,
        Term::Smooth,
        Term::Consistency,
        Term::BedContact,
        Term::Gravity,
        Term::SelfContact,
    ];

    pub fn weight_name(self) -> &'static str {
        match self {
            Term::Reprojection => "lambda_j",
            Term::Prior => "lambda_p",
            Term::Smooth => "lambda_sm",
            Term::Consistency => "lambda_cons",
            Term::BedContact => "lambda_bc",
            Term::Gravity => "lambda_g",
            Term::SelfContact => "lambda_sc",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Term::Reprojection => "reprojection",
            Term::Prior => "prior",
            Term::Smooth => "smooth",
            Term::Consistency => "consistency",
            Term::BedContact => "bed_contact",
            Term::Gravity => "gravity",
            Term::SelfContact => "self_contact",
        }
    }

    pub fn parse(s: &str) -> Option<Term> {
        Term::ALL.into_iter().find(|t| t.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    One,
    Two,
}

/// Unweighted value of every term plus the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub reprojection: f64,
    pub pose: f64,
    pub shape: f64,
    pub torso: f64,
    pub smooth: f64,
    pub consistency: f64,
    pub bed_contact: f64,
    pub gravity: f64,
    pub p_con: f64,
    pub p_isect: f64,
    pub push: f64,
    pub pull: f64,
    pub self_contact: f64,
    pub total: f64,
}

impl Breakdown {
    pub fn term(&self, t: Term) -> f64 {
        match t {
            Term::Reprojection => self.reprojection,
            Term::Prior => self.pose + self.shape + self.torso,
            Term::Smooth => self.smooth,
            Term::Consistency => self.consistency,
            Term::BedContact => self.bed_contact,
            Term::Gravity => self.gravity,
            Term::SelfContact => self.self_contact,
        }
    }

    pub fn is_finite(&self) -> bool {
        Term::ALL.iter().all(|t| self.term(*t).is_finite()) && self.total.is_finite()
    }
}

impl fmt::Display for Breakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "total={} reprojection={} pose={} shape={} torso={} smooth={} consistency={} \
             bed_contact={} gravity={} self_contact={} (p_con={} p_isect={} push={} pull={})",
            self.total,
            self.reprojection,
            self.pose,
            self.shape,
            self.torso,
            self.smooth,
            self.consistency,
            self.bed_contact,
            self.gravity,
            self.self_contact,
            self.p_con,
            self.p_isect,
            self.push,
            self.pull
        )
    }
}

/// Everything the objective needs about one window besides the
/// decision variables.
#[derive(Debug, Clone, Copy)]
pub struct WindowInputs<'a> {
    pub model: &'a BodyModel,
    pub camera: &'a Camera,
    pub gmm: &'a GmmPrior,
    pub centers: &'a CenterSpec,
    pub keypoints: &'a [Vec<[f64; 3]>],
    pub flags: &'a [Vec<JointFlag>],
    pub previous: Option<&'a [OverlapFrame]>,
}

/// Weighted sum of the seven terms for a window whose bodies are already
/// posed. With `grads`, adds the gradient of the total onto each frame's
/// `BodyGrad`; in stage two the shape gradient is dropped because beta
/// is a constant there.
pub fn stage_objective(
    stage: Stage,
    inputs: &WindowInputs<'_>,
    params: &[FrameParams],
    bodies: &[PosedBody],
    reports: &[PenetrationReport],
    w: &LossWeights,
    mut grads: Option<&mut [BodyGrad]>,
) -> Result<Breakdown> {
    let mut b = Breakdown::default();
    b.reprojection =
        reprojection_loss(bodies, inputs.keypoints, inputs.camera, w, grads.as_deref_mut(), w.lambda_j)?;
    b.pose = pose_prior_loss(params, inputs.gmm, w, grads.as_deref_mut(), w.lambda_p)?;
    b.shape = shape_prior_loss(params, w, grads.as_deref_mut(), w.lambda_p);
    b.torso = torso_prior_loss(bodies, w, grads.as_deref_mut(), w.lambda_p);
    b.smooth = smooth_loss(params, bodies, w, grads.as_deref_mut(), w.lambda_sm)?;
    b.consistency =
        consistency_loss(params, bodies, inputs.previous, w, grads.as_deref_mut(), w.lambda_cons)?;
    b.bed_contact = bed_contact_loss(bodies, w, grads.as_deref_mut(), w.lambda_bc);
    b.gravity = gravity_loss(
        bodies,
        inputs.flags,
        &w.gravity.joints,
        grads.as_deref_mut(),
        w.lambda_g,
    )?;
    let sc = self_contact_loss(bodies, reports, inputs.centers, w, grads.as_deref_mut(), w.lambda_sc)?;
    b.p_con = sc.p_con;
    b.p_isect = sc.p_isect;
    b.push = sc.push;
    b.pull = sc.pull;
    b.self_contact = sc.weighted(w);
    b.total = Term::ALL.iter().map(|&t| w.top_level(t) * b.term(t)).sum();
    if stage == Stage::Two {
        if let Some(g) = grads {
            for f in g.iter_mut() {
                f.beta = [0.0; NUM_BETAS];
            }
        }
    }
    Ok(b)
}
