//! Bipartite factor graphs with directed-edge message storage.
//!
//! A [`FactorGraph`] is immutable once built. Observed values and clamped
//! controls are kept outside the graph in an [`Assignments`] map so that the
//! same structure can be re-run with new clamps.

mod message;
mod schedule;

pub use message::{Assignments, Message, MessageBoard, MessageError};
pub use schedule::{
    run_schedule, variable_belief, Rule, Schedule, ScheduleEntry, ScheduleError,
};

use crate::chance::ChanceConstraintSpec;
use crate::gaussian::Gaussian1D;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VariableId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FactorId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Coefficients of an addition node with edges `[a, b, out]`:
/// `out = s0 * a + s1 * b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignPattern(pub Sign, pub Sign);

impl SignPattern {
    pub const SUM: SignPattern = SignPattern(Sign::Plus, Sign::Plus);
    pub const DIFFERENCE: SignPattern = SignPattern(Sign::Plus, Sign::Minus);
}

impl Default for SignPattern {
    fn default() -> Self {
        SignPattern::SUM
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    /// Deterministic `out = s0 * a + s1 * b`; edges `[a, b, out]`.
    Addition(SignPattern),
    /// `out ~ N(mean, variance)` with fixed variance; edges `[mean, out]`.
    Gaussian { variance: f64 },
    Prior(Gaussian1D),
    /// Observation or fixed parameter; the value is the variable's assignment.
    PointMassInput,
    ChanceConstraint(ChanceConstraintSpec),
    GoalPrior(Gaussian1D),
    /// Open end of a chain. Emits a flat message.
    Terminal,
}

impl NodeKind {
    pub fn arity(&self) -> usize {
        match self {
            NodeKind::Addition(_) => 3,
            NodeKind::Gaussian { .. } => 2,
            NodeKind::Prior(_)
            | NodeKind::PointMassInput
            | NodeKind::ChanceConstraint(_)
            | NodeKind::GoalPrior(_)
            | NodeKind::Terminal => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::Addition(_) => "addition",
            NodeKind::Gaussian { .. } => "gaussian",
            NodeKind::Prior(_) => "prior",
            NodeKind::PointMassInput => "point_mass_input",
            NodeKind::ChanceConstraint(_) => "chance_constraint",
            NodeKind::GoalPrior(_) => "goal_prior",
            NodeKind::Terminal => "terminal",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("duplicate identifier `{0}`")]
    DuplicateId(String),
    #[error("factor `{factor}` references unknown variable `{variable}`")]
    DanglingEdge { factor: String, variable: String },
    #[error("factor `{factor}` of kind {kind} needs {expected} edges, got {got}")]
    Arity {
        factor: String,
        kind: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("factor `{factor}` connects variable `{variable}` more than once")]
    RepeatedEdge { factor: String, variable: String },
    #[error("variable `{0}` has more than one point-mass input")]
    MultipleInputs(String),
    #[error("invalid parameter on factor `{factor}`: {reason}")]
    InvalidParameter { factor: String, reason: String },
}

#[derive(Clone, Debug)]
pub struct Variable {
    pub name: String,
    pub edges: Vec<EdgeId>,
}

#[derive(Clone, Debug)]
pub struct Factor {
    pub name: String,
    pub kind: NodeKind,
    /// Edges in slot order.
    pub edges: Vec<EdgeId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub variable: VariableId,
    pub factor: FactorId,
    pub slot: usize,
}

/// Serializable model description accepted by [`FactorGraph::build`].
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variables: Vec<String>,
    pub factors: Vec<FactorSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FactorSpec {
    pub name: String,
    pub kind: NodeKind,
    /// Variable names in slot order.
    pub variables: Vec<String>,
}

impl ModelSpec {
    pub fn variable(&mut self, name: impl Into<String>) -> &mut Self {
        self.variables.push(name.into());
        self
    }

    pub fn factor(&mut self, name: impl Into<String>, kind: NodeKind, variables: &[&str]) -> &mut Self {
        self.factors.push(FactorSpec {
            name: name.into(),
            kind,
            variables: variables.iter().map(|s| s.to_string()).collect(),
        });
        self
    }
}

#[derive(Clone, Debug)]
pub struct FactorGraph {
    variables: Vec<Variable>,
    factors: Vec<Factor>,
    edges: Vec<Edge>,
    variable_index: HashMap<String, VariableId>,
    factor_index: HashMap<String, FactorId>,
    /// Point-mass input attached to each variable, if any.
    inputs: Vec<Option<FactorId>>,
}

impl FactorGraph {
    pub fn build(spec: &ModelSpec) -> Result<Self, GraphError> {
        let mut variable_index = HashMap::new();
        let mut variables = Vec::with_capacity(spec.variables.len());
        for name in &spec.variables {
            if variable_index.insert(name.clone(), VariableId(variables.len())).is_some() {
                return Err(GraphError::DuplicateId(name.clone()));
            }
            variables.push(Variable {
                name: name.clone(),
                edges: Vec::new(),
            });
        }

        let mut factor_index = HashMap::new();
        let mut factors = Vec::with_capacity(spec.factors.len());
        let mut edges = Vec::new();
        let mut inputs = vec![None; variables.len()];
        for fs in &spec.factors {
            let id = FactorId(factors.len());
            if variable_index.contains_key(&fs.name) || factor_index.insert(fs.name.clone(), id).is_some() {
                return Err(GraphError::DuplicateId(fs.name.clone()));
            }
            let expected = fs.kind.arity();
            if fs.variables.len() != expected {
                return Err(GraphError::Arity {
                    factor: fs.name.clone(),
                    kind: fs.kind.name(),
                    expected,
                    got: fs.variables.len(),
                });
            }
            validate_parameters(&fs.name, &fs.kind)?;
            let mut slots = Vec::with_capacity(expected);
            for (slot, vname) in fs.variables.iter().enumerate() {
                let var = *variable_index.get(vname).ok_or_else(|| GraphError::DanglingEdge {
                    factor: fs.name.clone(),
                    variable: vname.clone(),
                })?;
                if fs.variables[..slot].contains(vname) {
                    return Err(GraphError::RepeatedEdge {
                        factor: fs.name.clone(),
                        variable: vname.clone(),
                    });
                }
                let eid = EdgeId(edges.len());
                edges.push(Edge {
                    variable: var,
                    factor: id,
                    slot,
                });
                variables[var.0].edges.push(eid);
                slots.push(eid);
                if fs.kind == NodeKind::PointMassInput {
                    if inputs[var.0].is_some() {
                        return Err(GraphError::MultipleInputs(vname.clone()));
                    }
                    inputs[var.0] = Some(id);
                }
            }
            factors.push(Factor {
                name: fs.name.clone(),
                kind: fs.kind.clone(),
                edges: slots,
            });
        }

        Ok(FactorGraph {
            variables,
            factors,
            edges,
            variable_index,
            factor_index,
            inputs,
        })
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn variable(&self, id: VariableId) -> &Variable {
        &self.variables[id.0]
    }

    pub fn factor(&self, id: FactorId) -> &Factor {
        &self.factors[id.0]
    }

    pub fn edge(&self, id: EdgeId) -> Edge {
        self.edges[id.0]
    }

    pub fn variable_id(&self, name: &str) -> Option<VariableId> {
        self.variable_index.get(name).copied()
    }

    pub fn factor_id(&self, name: &str) -> Option<FactorId> {
        self.factor_index.get(name).copied()
    }

    pub fn factors(&self) -> impl Iterator<Item = (FactorId, &Factor)> {
        self.factors.iter().enumerate().map(|(i, f)| (FactorId(i), f))
    }

    pub fn variables(&self) -> impl Iterator<Item = (VariableId, &Variable)> {
        self.variables.iter().enumerate().map(|(i, v)| (VariableId(i), v))
    }

    /// Factors adjacent to a variable.
    pub fn factor_neighbors(&self, v: VariableId) -> impl Iterator<Item = FactorId> + '_ {
        self.variables[v.0].edges.iter().map(|e| self.edges[e.0].factor)
    }

    /// Variables adjacent to a factor, in slot order.
    pub fn variable_neighbors(&self, f: FactorId) -> impl Iterator<Item = VariableId> + '_ {
        self.factors[f.0].edges.iter().map(|e| self.edges[e.0].variable)
    }

    pub fn degree(&self, v: VariableId) -> usize {
        self.variables[v.0].edges.len()
    }

    pub fn edge_between(&self, v: VariableId, f: FactorId) -> Option<EdgeId> {
        self.variables[v.0]
            .edges
            .iter()
            .copied()
            .find(|e| self.edges[e.0].factor == f)
    }

    /// The point-mass input factor of an observed variable.
    pub fn input_of(&self, v: VariableId) -> Option<FactorId> {
        self.inputs[v.0]
    }

    pub fn is_observed(&self, v: VariableId) -> bool {
        self.inputs[v.0].is_some()
    }

    /// Directed edge from variable to factor.
    pub fn to_factor(&self, v: VariableId, f: FactorId) -> Option<DirectedEdge> {
        self.edge_between(v, f).map(DirectedEdge::to_factor)
    }

    /// Directed edge from factor to variable.
    pub fn to_variable(&self, f: FactorId, v: VariableId) -> Option<DirectedEdge> {
        self.edge_between(v, f).map(DirectedEdge::to_variable)
    }

    pub fn describe(&self, e: DirectedEdge) -> String {
        let edge = self.edges[e.edge.0];
        let v = &self.variables[edge.variable.0].name;
        let f = &self.factors[edge.factor.0].name;
        match e.toward {
            Toward::Factor => format!("{v}->{f}"),
            Toward::Variable => format!("{f}->{v}"),
        }
    }
}

fn validate_parameters(name: &str, kind: &NodeKind) -> Result<(), GraphError> {
    let bad = |reason: String| GraphError::InvalidParameter {
        factor: name.to_string(),
        reason,
    };
    match kind {
        NodeKind::Gaussian { variance } if !(variance.is_finite() && *variance > 0.0) => {
            Err(bad(format!("variance must be positive, got {variance}")))
        }
        NodeKind::ChanceConstraint(spec) => spec.validate().map_err(|e| bad(e.to_string())),
        _ => Ok(()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Toward {
    Factor,
    Variable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DirectedEdge {
    pub edge: EdgeId,
    pub toward: Toward,
}

impl DirectedEdge {
    pub fn to_factor(edge: EdgeId) -> Self {
        DirectedEdge {
            edge,
            toward: Toward::Factor,
        }
    }

    pub fn to_variable(edge: EdgeId) -> Self {
        DirectedEdge {
            edge,
            toward: Toward::Variable,
        }
    }

    pub fn reversed(self) -> Self {
        DirectedEdge {
            edge: self.edge,
            toward: match self.toward {
                Toward::Factor => Toward::Variable,
                Toward::Variable => Toward::Factor,
            },
        }
    }
}
