use super::{
    Assignments, DirectedEdge, FactorGraph, FactorId, Message, MessageBoard, MessageError, NodeKind, Toward,
    VariableId,
};
use crate::chance::{chance_message, ChanceError};
use crate::gaussian::{Gaussian1D, GaussianError};
use crate::rules::{self, Addend, RuleError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// How a scheduled message is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Sum-product: the node's BP rule for factor-to-variable messages, the
    /// product of the other incoming messages for variable-to-factor ones.
    SumProduct,
    /// Mean-field rule through a fixed-variance Gaussian node, using the
    /// opposite variable's point-mass constraint or current belief.
    Variational,
    /// Mean-field message toward the control of a decomposed transition
    /// `N(next | prev + u + offset, v)`; targets the control side of the
    /// node's Gaussian factor.
    VariationalControl {
        previous: VariableId,
        next: VariableId,
        offset: VariableId,
    },
    /// Gaussian-approximated chance-constraint message.
    ChanceConstraint,
    /// `δ(x - a)` with `a` taken from the variable's assignment.
    Clamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub edge: DirectedEdge,
    pub rule: Rule,
    #[serde(default)]
    pub label: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub entries: Vec<ScheduleEntry>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("entry {position} ({label}): {reason}")]
    Invalid {
        position: usize,
        label: String,
        reason: String,
    },
    #[error("entry {position} ({label}): {source}")]
    Rule {
        position: usize,
        label: String,
        #[source]
        source: StepError,
    },
    #[error("variable `{0}` is observed and has no Gaussian belief")]
    ObservedVariable(String),
    #[error("belief of `{0}` is improper")]
    ImproperBelief(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Chance(#[from] ChanceError),
    #[error(transparent)]
    Message(#[from] MessageError),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
    #[error("variable `{0}` has no assignment")]
    Unassigned(String),
    #[error("{0}")]
    Belief(String),
}

impl Schedule {
    pub fn new() -> Self {
        Schedule::default()
    }

    pub fn push(&mut self, edge: DirectedEdge, rule: Rule, label: impl Into<String>) {
        self.entries.push(ScheduleEntry {
            edge,
            rule,
            label: label.into(),
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.label.as_str())
    }

    /// Checks that every entry's rule applies to its edge and node kind.
    pub fn validate(&self, graph: &FactorGraph) -> Result<(), ScheduleError> {
        for (position, entry) in self.entries.iter().enumerate() {
            check_entry(graph, entry).map_err(|reason| ScheduleError::Invalid {
                position,
                label: entry.label.clone(),
                reason,
            })?;
        }
        Ok(())
    }

    /// Scheduled inputs that are read before the schedule writes them.
    ///
    /// On a first run these are uninformative; on later runs they carry the
    /// previous sweep's value.
    pub fn carried_inputs(&self, graph: &FactorGraph) -> Vec<(usize, DirectedEdge)> {
        let scheduled: std::collections::HashSet<_> = self.entries.iter().map(|e| e.edge).collect();
        let mut written = std::collections::HashSet::new();
        let mut carried = Vec::new();
        for (position, entry) in self.entries.iter().enumerate() {
            for input in entry_inputs(graph, entry) {
                if scheduled.contains(&input) && !written.contains(&input) {
                    carried.push((position, input));
                }
            }
            written.insert(entry.edge);
        }
        carried
    }
}

fn check_entry(graph: &FactorGraph, entry: &ScheduleEntry) -> Result<(), String> {
    if entry.edge.edge.0 >= graph.num_edges() {
        return Err("edge out of range".into());
    }
    let edge = graph.edge(entry.edge.edge);
    let kind = &graph.factor(edge.factor).kind;
    match (entry.rule, entry.edge.toward) {
        (Rule::SumProduct, Toward::Variable) => match kind {
            NodeKind::ChanceConstraint(_) => Err("chance nodes need the chance-constraint rule".into()),
            _ => Ok(()),
        },
        (Rule::SumProduct, Toward::Factor) => Ok(()),
        (Rule::Clamp, Toward::Factor) => Ok(()),
        (Rule::Variational, Toward::Variable) => match kind {
            NodeKind::Gaussian { .. } => Ok(()),
            _ => Err(format!("variational rule on a {} node", kind.name())),
        },
        (Rule::VariationalControl { offset, .. }, Toward::Variable) => match kind {
            NodeKind::Gaussian { .. } if edge.slot == 0 => {
                if graph.is_observed(offset) {
                    Ok(())
                } else {
                    Err("offset variable must be observed".into())
                }
            }
            _ => Err("variational control rule must target the mean side of a Gaussian node".into()),
        },
        (Rule::ChanceConstraint, Toward::Variable) => match kind {
            NodeKind::ChanceConstraint(_) => Ok(()),
            _ => Err(format!("chance-constraint rule on a {} node", kind.name())),
        },
        (rule, toward) => Err(format!("rule {rule:?} cannot compute a message toward a {toward:?}")),
    }
}

/// Board edges an entry reads (for dependency analysis).
fn entry_inputs(graph: &FactorGraph, entry: &ScheduleEntry) -> Vec<DirectedEdge> {
    let edge = graph.edge(entry.edge.edge);
    match (entry.rule, entry.edge.toward) {
        (Rule::SumProduct, Toward::Factor) => graph
            .variable(edge.variable)
            .edges
            .iter()
            .filter(|&&e| e != entry.edge.edge)
            .map(|&e| DirectedEdge::to_variable(e))
            .collect(),
        (Rule::SumProduct, Toward::Variable) | (Rule::Variational, Toward::Variable) => graph
            .factor(edge.factor)
            .edges
            .iter()
            .filter(|&&e| e != entry.edge.edge)
            .map(|&e| DirectedEdge::to_factor(e))
            .collect(),
        (Rule::ChanceConstraint, _) => graph
            .variable(edge.variable)
            .edges
            .iter()
            .filter(|&&e| e != entry.edge.edge)
            .map(|&e| DirectedEdge::to_variable(e))
            .collect(),
        _ => Vec::new(),
    }
}

struct Context<'a> {
    graph: &'a FactorGraph,
    board: &'a MessageBoard,
    assignments: &'a Assignments,
}

impl Context<'_> {
    fn assigned(&self, v: VariableId) -> Result<f64, StepError> {
        self.assignments
            .get(v)
            .ok_or_else(|| StepError::Unassigned(self.graph.variable(v).name.clone()))
    }

    /// Factor-to-variable message; point-mass inputs read their assignment.
    fn to_variable(&self, e: DirectedEdge) -> Result<Message, StepError> {
        let edge = self.graph.edge(e.edge);
        if self.graph.factor(edge.factor).kind == NodeKind::PointMassInput {
            return Ok(Message::point_mass(self.assigned(edge.variable)?));
        }
        Ok(self.board.get(e))
    }

    /// Variable-to-factor message. Observed variables send their value;
    /// otherwise the stored message is used, falling back to the product of
    /// the variable's other incoming messages when nothing is stored.
    fn to_factor(&self, e: DirectedEdge) -> Result<Message, StepError> {
        let edge = self.graph.edge(e.edge);
        if self.graph.is_observed(edge.variable) {
            return Ok(Message::point_mass(self.assigned(edge.variable)?));
        }
        if let Some(m) = self.board.try_get(e) {
            return Ok(m);
        }
        self.variable_product(edge.variable, Some(e.edge))
    }

    fn variable_product(&self, v: VariableId, except: Option<super::EdgeId>) -> Result<Message, StepError> {
        let incoming = self
            .graph
            .variable(v)
            .edges
            .iter()
            .filter(|&&e| Some(e) != except)
            .map(|&e| self.to_variable(DirectedEdge::to_variable(e)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Message::product(&incoming)?)
    }

    fn belief_mean(&self, v: VariableId) -> Result<f64, StepError> {
        if self.graph.is_observed(v) {
            return self.assigned(v);
        }
        match self.variable_product(v, None)? {
            Message::Gaussian(g) => Ok(g.mean()),
            Message::PointMass { value } => Ok(value),
            other => Err(StepError::Belief(format!(
                "belief of `{}` is not normalizable ({other:?})",
                self.graph.variable(v).name
            ))),
        }
    }

    /// Mean of `q(v)` for the variational rule: a point-mass constraint if
    /// the variable currently sends one, else its belief.
    fn variational_mean(&self, v: VariableId, toward: FactorId) -> Result<f64, StepError> {
        let e = self.graph.to_factor(v, toward).expect("adjacent");
        if let Message::PointMass { value } = self.to_factor(e)? {
            return Ok(value);
        }
        self.belief_mean(v)
    }

    fn compute(&self, entry: &ScheduleEntry) -> Result<(Message, Option<crate::chance::CorrectionDiagnostics>), StepError> {
        let graph = self.graph;
        let edge = graph.edge(entry.edge.edge);
        let factor = graph.factor(edge.factor);
        let other_input = |slot: usize| self.to_factor(DirectedEdge::to_factor(factor.edges[slot]));
        let msg = match (entry.rule, entry.edge.toward) {
            (Rule::Clamp, _) => Message::point_mass(self.assigned(edge.variable)?),
            (Rule::SumProduct, Toward::Factor) => self.variable_product(edge.variable, Some(entry.edge.edge))?,
            (Rule::SumProduct, Toward::Variable) => match &factor.kind {
                NodeKind::Addition(signs) => match edge.slot {
                    2 => rules::bp_addition_forward(&other_input(0)?, &other_input(1)?, *signs)?,
                    0 => rules::bp_addition_backward(&other_input(2)?, &other_input(1)?, Addend::First, *signs)?,
                    _ => rules::bp_addition_backward(&other_input(2)?, &other_input(0)?, Addend::Second, *signs)?,
                },
                NodeKind::Gaussian { variance } => rules::bp_gaussian_node(&other_input(1 - edge.slot)?, *variance)?,
                NodeKind::Prior(_) | NodeKind::GoalPrior(_) => rules::prior_message(&factor.kind)?,
                NodeKind::PointMassInput => Message::point_mass(self.assigned(edge.variable)?),
                NodeKind::Terminal => Message::Uninformative,
                NodeKind::ChanceConstraint(_) => unreachable!("rejected by validation"),
            },
            (Rule::Variational, _) => {
                let NodeKind::Gaussian { variance } = factor.kind else { unreachable!() };
                let opposite = graph.edge(factor.edges[1 - edge.slot]).variable;
                rules::variational_gaussian_node(self.variational_mean(opposite, edge.factor)?, variance)?
            }
            (Rule::VariationalControl { previous, next, offset }, _) => {
                let NodeKind::Gaussian { variance } = factor.kind else { unreachable!() };
                let prev = Message::point_mass(self.belief_mean(previous)?);
                let next_mean = self.belief_mean(next)?;
                // Only the means enter the rule; the unit variance is a placeholder.
                let next = Gaussian1D::new(next_mean, 1.0)?;
                rules::variational_control_message(&prev, &next, self.assigned(offset)?, variance)?
            }
            (Rule::ChanceConstraint, _) => {
                let NodeKind::ChanceConstraint(spec) = &factor.kind else { unreachable!() };
                // The inbound is evaluated now rather than read from the
                // board, so it always carries the current forward messages.
                let inbound = if graph.is_observed(edge.variable) {
                    Message::point_mass(self.assigned(edge.variable)?)
                } else {
                    self.variable_product(edge.variable, Some(entry.edge.edge))?
                };
                let (m, d) = chance_message(&inbound, spec)?;
                return Ok((m, Some(d)));
            }
        };
        Ok((msg, None))
    }
}

/// Executes the schedule in order, writing every computed message to the
/// board. Gaussian messages are stored normalized in moment form.
pub fn run_schedule(
    graph: &FactorGraph,
    board: &mut MessageBoard,
    assignments: &Assignments,
    schedule: &Schedule,
) -> Result<(), ScheduleError> {
    for (position, entry) in schedule.entries.iter().enumerate() {
        check_entry(graph, entry).map_err(|reason| ScheduleError::Invalid {
            position,
            label: entry.label.clone(),
            reason,
        })?;
        let ctx = Context {
            graph,
            board,
            assignments,
        };
        let (msg, diag) = ctx.compute(entry).map_err(|source| ScheduleError::Rule {
            position,
            label: entry.label.clone(),
            source,
        })?;
        board.set(entry.edge, msg);
        if let Some(d) = diag {
            board.record_diagnostics(graph.edge(entry.edge.edge).factor, d);
        }
    }
    Ok(())
}

/// Normalized product of all factor-to-variable messages at `v`.
pub fn variable_belief(graph: &FactorGraph, board: &MessageBoard, v: VariableId) -> Result<Gaussian1D, ScheduleError> {
    let name = || graph.variable(v).name.clone();
    if graph.is_observed(v) {
        return Err(ScheduleError::ObservedVariable(name()));
    }
    let incoming: Vec<Message> = graph
        .variable(v)
        .edges
        .iter()
        .map(|&e| board.get(DirectedEdge::to_variable(e)))
        .collect();
    match Message::product(&incoming) {
        Ok(Message::Gaussian(g)) => Ok(g),
        Ok(Message::PointMass { .. }) => Err(ScheduleError::ObservedVariable(name())),
        _ => Err(ScheduleError::ImproperBelief(name())),
    }
}
