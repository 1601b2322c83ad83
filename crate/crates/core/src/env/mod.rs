//! Deterministic simulated tool environment.
//!
//! Tools mutate an abstract [`SceneState`] and charge simulated runtime. The
//! transition table is fixed and contains no randomness, so a trajectory's
//! scores are a pure function of its calls.

pub mod instruction;

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rollout::{Rollout, RolloutFlags, Step};
use crate::scoring::{composition, quality, ScoreParams};

pub use instruction::{Dimension, Emphasis, Instruction};

pub const INIT_VIS: f64 = 4.0;
pub const VIS_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub n_obj: u32,
    pub n_oob: u32,
    pub n_col: u32,
    pub vis_real: f64,
    pub vis_func: f64,
    pub vis_lay: f64,
}

impl SceneState {
    /// The scene right after `init_room`.
    pub fn initial() -> Self {
        Self {
            n_obj: 0,
            n_oob: 0,
            n_col: 0,
            vis_real: INIT_VIS,
            vis_func: INIT_VIS,
            vis_lay: INIT_VIS,
        }
    }

    pub fn vis(&self, dim: Dimension) -> f64 {
        match dim {
            Dimension::Real => self.vis_real,
            Dimension::Func => self.vis_func,
            Dimension::Lay => self.vis_lay,
        }
    }

    fn vis_mut(&mut self, dim: Dimension) -> &mut f64 {
        match dim {
            Dimension::Real => &mut self.vis_real,
            Dimension::Func => &mut self.vis_func,
            Dimension::Lay => &mut self.vis_lay,
        }
    }

    pub fn is_valid(&self) -> bool {
        Dimension::ALL
            .iter()
            .all(|&d| (0.0..=VIS_MAX).contains(&self.vis(d)))
    }
}

/// What a tool does to the scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    InitRoom,
    AddObjects,
    ResolveCollisions,
    FitToBoundary,
    Refine(Dimension),
    Review,
    Stop,
}

/// The quantity that `cost_per_unit` multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostDriver {
    None,
    Param,
    Collisions,
    OutOfBounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolSpec {
    pub name: String,
    pub effect: Effect,
    pub param_arity: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_range: Option<(u32, u32)>,
    pub cost_base: f64,
    pub cost_per_unit: f64,
    pub cost_driver: CostDriver,
}

impl ToolSpec {
    fn simple(name: &str, effect: Effect, cost: f64) -> Self {
        Self {
            name: name.into(),
            effect,
            param_arity: 0,
            param_range: None,
            cost_base: cost,
            cost_per_unit: 0.0,
            cost_driver: CostDriver::None,
        }
    }

    /// Runtime charged for this call against the pre-step state.
    pub fn cost(&self, pre: &SceneState, param: Option<u32>) -> f64 {
        let units = match self.cost_driver {
            CostDriver::None => 0.0,
            CostDriver::Param => f64::from(param.unwrap_or(0)),
            CostDriver::Collisions => f64::from(pre.n_col),
            CostDriver::OutOfBounds => f64::from(pre.n_oob),
        };
        self.cost_base + self.cost_per_unit * units
    }
}

pub const INIT_ROOM: &str = "init_room";
pub const ADD_OBJECTS: &str = "add_objects";
pub const RESOLVE_COLLISIONS: &str = "resolve_collisions";
pub const FIT_TO_BOUNDARY: &str = "fit_to_boundary";
pub const REFINE_REAL: &str = "refine_real";
pub const REFINE_FUNC: &str = "refine_func";
pub const REFINE_LAY: &str = "refine_lay";
pub const REVIEW: &str = "review";
pub const STOP: &str = "stop";

pub fn refine_tool(dim: Dimension) -> &'static str {
    match dim {
        Dimension::Real => REFINE_REAL,
        Dimension::Func => REFINE_FUNC,
        Dimension::Lay => REFINE_LAY,
    }
}

pub fn default_registry() -> Vec<ToolSpec> {
    vec![
        ToolSpec::simple(INIT_ROOM, Effect::InitRoom, 1.0),
        ToolSpec {
            name: ADD_OBJECTS.into(),
            effect: Effect::AddObjects,
            param_arity: 1,
            param_range: Some((1, 8)),
            cost_base: 0.0,
            cost_per_unit: 0.8,
            cost_driver: CostDriver::Param,
        },
        ToolSpec {
            name: RESOLVE_COLLISIONS.into(),
            effect: Effect::ResolveCollisions,
            param_arity: 0,
            param_range: None,
            cost_base: 2.0,
            cost_per_unit: 0.5,
            cost_driver: CostDriver::Collisions,
        },
        ToolSpec {
            name: FIT_TO_BOUNDARY.into(),
            effect: Effect::FitToBoundary,
            param_arity: 0,
            param_range: None,
            cost_base: 1.5,
            cost_per_unit: 0.5,
            cost_driver: CostDriver::OutOfBounds,
        },
        ToolSpec::simple(REFINE_REAL, Effect::Refine(Dimension::Real), 3.0),
        ToolSpec::simple(REFINE_FUNC, Effect::Refine(Dimension::Func), 3.0),
        ToolSpec::simple(REFINE_LAY, Effect::Refine(Dimension::Lay), 3.0),
        ToolSpec::simple(REVIEW, Effect::Review, 2.5),
        ToolSpec::simple(STOP, Effect::Stop, 0.0),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<u32>,
}

impl ToolCall {
    pub fn new(tool: &str) -> Self {
        Self {
            tool: tool.into(),
            param: None,
        }
    }

    pub fn with_param(tool: &str, param: u32) -> Self {
        Self {
            tool: tool.into(),
            param: Some(param),
        }
    }

    pub fn is(&self, tool: &str) -> bool {
        self.tool == tool
    }
}

impl std::fmt::Display for ToolCall {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.param {
            Some(p) => write!(f, "{}({p})", self.tool),
            None => f.write_str(&self.tool),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryFile {
    pub tools: Vec<ToolSpec>,
}

/// Validates a registry and indexes it by name.
fn index_registry(tools: &[ToolSpec]) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::new();
    for (i, t) in tools.iter().enumerate() {
        if t.cost_base < 0.0 || t.cost_per_unit < 0.0 {
            return Err(Error::Config(format!("tool `{}` has a negative cost", t.name)));
        }
        match (t.param_arity, t.param_range) {
            (0, None) => {}
            (1, Some((lo, hi))) if lo <= hi => {}
            _ => {
                return Err(Error::Config(format!(
                    "tool `{}` has inconsistent arity/range",
                    t.name
                )))
            }
        }
        if index.insert(t.name.clone(), i).is_some() {
            return Err(Error::Config(format!("duplicate tool name `{}`", t.name)));
        }
    }
    Ok(index)
}

pub fn save_registry(path: &Path, tools: &[ToolSpec]) -> Result<()> {
    let body = toml::to_string_pretty(&RegistryFile {
        tools: tools.to_vec(),
    })
    .map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn load_registry(path: &Path) -> Result<Vec<ToolSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: RegistryFile = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    index_registry(&file.tools)?;
    Ok(file.tools)
}

/// The tool environment. Immutable after construction apart from the
/// `apply_tool` call counter.
#[derive(Debug)]
pub struct Environment {
    tools: Vec<ToolSpec>,
    index: HashMap<String, usize>,
    pub params: ScoreParams,
    pub max_steps: usize,
    calls: AtomicU64,
}

impl Clone for Environment {
    fn clone(&self) -> Self {
        Self {
            tools: self.tools.clone(),
            index: self.index.clone(),
            params: self.params,
            max_steps: self.max_steps,
            calls: AtomicU64::new(0),
        }
    }
}

impl Default for Environment {
    fn default() -> Self {
        Self::new(default_registry(), ScoreParams::default(), 40).expect("default registry is valid")
    }
}

impl Environment {
    pub fn new(tools: Vec<ToolSpec>, params: ScoreParams, max_steps: usize) -> Result<Self> {
        params.validate()?;
        let index = index_registry(&tools)?;
        Ok(Self {
            tools,
            index,
            params,
            max_steps,
            calls: AtomicU64::new(0),
        })
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    pub fn tool(&self, name: &str) -> Option<&ToolSpec> {
        self.index.get(name).map(|&i| &self.tools[i])
    }

    /// Number of `apply_tool` invocations since construction.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn validate_call(&self, call: &ToolCall) -> Result<&ToolSpec> {
        let spec = self
            .tool(&call.tool)
            .ok_or_else(|| Error::UnknownTool(call.tool.clone()))?;
        match (spec.param_range, call.param) {
            (None, None) => Ok(spec),
            (Some((lo, hi)), Some(p)) if (lo..=hi).contains(&p) => Ok(spec),
            (Some((lo, hi)), Some(p)) => Err(Error::InvalidCall {
                tool: call.tool.clone(),
                reason: format!("param {p} outside [{lo}, {hi}]"),
            }),
            (Some(_), None) => Err(Error::InvalidCall {
                tool: call.tool.clone(),
                reason: "missing param".into(),
            }),
            (None, Some(_)) => Err(Error::InvalidCall {
                tool: call.tool.clone(),
                reason: "takes no param".into(),
            }),
        }
    }

    /// Applies one call. `state` is `None` until `init_room` has run.
    pub fn apply_tool(&self, state: Option<&SceneState>, call: &ToolCall) -> Result<(SceneState, f64)> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let spec = self.validate_call(call)?;
        let pre = match (state, spec.effect) {
            (_, Effect::InitRoom) => SceneState::initial(),
            (Some(s), _) => *s,
            (None, _) => {
                return Err(Error::Ordering {
                    tool: call.tool.clone(),
                    step: 1,
                })
            }
        };
        let dt = match spec.effect {
            Effect::InitRoom => spec.cost_base,
            _ => spec.cost(&pre, call.param),
        };
        let mut post = pre;
        match spec.effect {
            Effect::InitRoom | Effect::Review | Effect::Stop => {}
            Effect::AddObjects => {
                let n = call.param.unwrap_or(0);
                post.n_obj += n;
                post.n_col += n / 3;
                post.n_oob += n / 5;
            }
            Effect::ResolveCollisions => post.n_col = 0,
            Effect::FitToBoundary => post.n_oob = 0,
            Effect::Refine(d) => {
                let v = post.vis_mut(d);
                *v += 0.5 * (VIS_MAX - *v);
            }
        }
        Ok((post, dt))
    }

    /// Executes a whole call list, stopping at the first `stop` or the first
    /// invalid call. Invalid calls flag the rollout instead of failing.
    pub fn execute_trajectory(&self, instr: &Instruction, calls: &[ToolCall]) -> Result<Rollout> {
        if calls.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        if calls.len() > self.max_steps {
            return Err(Error::Validation(format!(
                "trajectory of {} calls exceeds max_steps {}",
                calls.len(),
                self.max_steps
            )));
        }
        let mut exec = Execution::new(self, instr);
        for call in calls {
            if exec.push(call).is_err() || call.is(STOP) {
                break;
            }
        }
        Ok(exec.finish(0))
    }
}

/// Incremental execution of one trajectory with per-step scoring.
pub struct Execution<'a> {
    env: &'a Environment,
    target: u32,
    instr_id: String,
    state: Option<SceneState>,
    t_cum: f64,
    steps: Vec<Step>,
    failure: Option<(usize, String)>,
}

impl<'a> Execution<'a> {
    pub fn new(env: &'a Environment, instr: &Instruction) -> Self {
        Self {
            env,
            target: instr.target_object_count,
            instr_id: instr.id.clone(),
            state: None,
            t_cum: 0.0,
            steps: Vec::new(),
            failure: None,
        }
    }

    pub fn state(&self) -> Option<&SceneState> {
        self.state.as_ref()
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn is_failed(&self) -> bool {
        self.failure.is_some()
    }

    /// Executes and records one call. After a failure, further pushes are
    /// rejected.
    pub fn push(&mut self, call: &ToolCall) -> Result<&Step> {
        let step_no = self.steps.len() + 1;
        if let Some((k, msg)) = &self.failure {
            return Err(Error::Validation(format!("execution already failed at step {k}: {msg}")));
        }
        let outcome = match (self.state.as_ref(), call.is(INIT_ROOM)) {
            (None, false) => Err(Error::Ordering {
                tool: call.tool.clone(),
                step: step_no,
            }),
            (state, _) => self.env.apply_tool(state, call),
        };
        match outcome {
            Ok((post, dt)) => {
                self.t_cum += dt;
                let q = quality(&post, self.target, &self.env.params);
                let c = composition(q.q_total, self.t_cum, &self.env.params);
                self.state = Some(post);
                self.steps.push(Step {
                    call: call.clone(),
                    post_state: post,
                    q,
                    t_cum: self.t_cum,
                    c,
                });
                Ok(self.steps.last().expect("just pushed"))
            }
            Err(e) => {
                self.failure = Some((step_no, e.to_string()));
                Err(e)
            }
        }
    }

    pub fn finish(self, seed: u64) -> Rollout {
        let (valid, failure_step, failure) = match self.failure {
            Some((k, msg)) => (false, Some(k), Some(msg)),
            None => (true, None, None),
        };
        Rollout {
            instr_id: self.instr_id,
            seed,
            steps: self.steps,
            flags: RolloutFlags {
                valid,
                failure_step,
                failure,
            },
        }
    }
}
