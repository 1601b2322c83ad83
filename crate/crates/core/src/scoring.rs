//! Quality and composition scores of a scene.
//!
//! ```text
//! q_phy  = n_obj - alpha * (n_oob + n_col)
//! s_comp = min(10, 10 * n_obj / target)
//! q_vis  = (vis_real + vis_func + vis_lay + s_comp) / 4
//! Q      = lambda * q_phy + q_vis
//! C      = Q - gamma * T
//! ```

use serde::{Deserialize, Serialize};

use crate::env::SceneState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreParams {
    /// Penalty per out-of-boundary object or collided pair.
    pub alpha: f64,
    /// Weight of the physical score against the visual score.
    pub lambda: f64,
    /// Cost per unit of cumulative runtime.
    pub gamma: f64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self {
            alpha: 4.0,
            lambda: 0.1,
            gamma: 0.05,
        }
    }
}

impl ScoreParams {
    pub fn validate(&self) -> crate::Result<()> {
        for (name, v) in [("alpha", self.alpha), ("lambda", self.lambda), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(crate::Error::Config(format!("score param {name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityBreakdown {
    pub q_phy: f64,
    pub q_vis: f64,
    pub s_comp: f64,
    pub q_total: f64,
}

pub fn completeness(n_obj: u32, target: u32) -> f64 {
    (10.0 * f64::from(n_obj) / f64::from(target)).min(10.0)
}

pub fn quality(state: &SceneState, target_object_count: u32, params: &ScoreParams) -> QualityBreakdown {
    let s_comp = completeness(state.n_obj, target_object_count);
    let q_phy = f64::from(state.n_obj) - params.alpha * f64::from(state.n_oob + state.n_col);
    let q_vis = (state.vis_real + state.vis_func + state.vis_lay + s_comp) / 4.0;
    QualityBreakdown {
        q_phy,
        q_vis,
        s_comp,
        q_total: params.lambda * q_phy + q_vis,
    }
}

pub fn composition(q_total: f64, cumulative_time: f64, params: &ScoreParams) -> f64 {
    q_total - params.gamma * cumulative_time
}
