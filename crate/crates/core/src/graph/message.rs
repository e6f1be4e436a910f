use super::{DirectedEdge, FactorId, FactorGraph, Toward, VariableId};
use crate::chance::CorrectionDiagnostics;
use crate::gaussian::{Canonical, Gaussian1D, GaussianError, Quotient};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MessageError {
    #[error("conflicting point masses {0} and {1}")]
    ConflictingPointMass(f64, f64),
    #[error(transparent)]
    Gaussian(#[from] GaussianError),
}

/// A message on a directed edge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Gaussian(Gaussian1D),
    /// `δ(x - value)`; only produced for clamped controls and observations.
    PointMass { value: f64 },
    Uninformative,
    /// Non-normalizable Gaussian carrier, typically an EP quotient.
    Improper(Canonical),
}

impl Message {
    pub fn point_mass(value: f64) -> Self {
        Message::PointMass { value }
    }

    pub fn is_uninformative(&self) -> bool {
        matches!(self, Message::Uninformative)
    }

    pub fn as_gaussian(&self) -> Option<Gaussian1D> {
        match self {
            Message::Gaussian(g) => Some(*g),
            _ => None,
        }
    }

    /// Canonical statistics; `None` for point masses.
    pub fn canonical(&self) -> Option<Canonical> {
        match self {
            Message::Gaussian(g) => Some(g.canonical()),
            Message::Improper(c) => Some(*c),
            Message::Uninformative => Some(Canonical::FLAT),
            Message::PointMass { .. } => None,
        }
    }

    pub fn from_canonical(c: Canonical) -> Self {
        if c.is_flat() {
            Message::Uninformative
        } else if c.is_proper() {
            match Gaussian1D::from_canonical(c) {
                Ok(g) => Message::Gaussian(g),
                Err(_) => Message::Improper(c),
            }
        } else {
            Message::Improper(c)
        }
    }

    /// Pointwise product of messages, renormalized.
    ///
    /// A point mass absorbs any density it is multiplied with.
    pub fn product<'a, I>(messages: I) -> Result<Message, MessageError>
    where
        I: IntoIterator<Item = &'a Message>,
    {
        let mut acc = Canonical::FLAT;
        let mut point: Option<f64> = None;
        // A lone informative factor passes through without a canonical round trip.
        let mut lone: Option<&Message> = None;
        let mut informative = 0;
        for m in messages {
            if !matches!(m, Message::Uninformative) {
                informative += 1;
                lone = Some(m);
            }
            match m {
                Message::PointMass { value } => match point {
                    Some(p) if p != *value => return Err(MessageError::ConflictingPointMass(p, *value)),
                    _ => point = Some(*value),
                },
                other => acc = acc.product(other.canonical().expect("non-point message")),
            }
        }
        Ok(match (point, lone) {
            (Some(value), _) => Message::point_mass(value),
            (None, Some(m)) if informative == 1 => m.clone(),
            (None, _) => Message::from_canonical(acc),
        })
    }
}

impl From<Gaussian1D> for Message {
    fn from(g: Gaussian1D) -> Self {
        Message::Gaussian(g)
    }
}

impl From<Quotient> for Message {
    fn from(q: Quotient) -> Self {
        match q {
            Quotient::Proper(g) => Message::Gaussian(g),
            Quotient::Improper(c) => Message::Improper(c),
            Quotient::Flat => Message::Uninformative,
        }
    }
}

/// Current message on every directed edge of one graph.
///
/// Unset edges read as [`Message::Uninformative`].
#[derive(Clone, Debug, Default)]
pub struct MessageBoard {
    to_factor: Vec<Option<Message>>,
    to_variable: Vec<Option<Message>>,
    diagnostics: BTreeMap<FactorId, CorrectionDiagnostics>,
}

impl MessageBoard {
    pub fn new(graph: &FactorGraph) -> Self {
        MessageBoard {
            to_factor: vec![None; graph.num_edges()],
            to_variable: vec![None; graph.num_edges()],
            diagnostics: BTreeMap::new(),
        }
    }

    fn slot(&self, e: DirectedEdge) -> &Option<Message> {
        match e.toward {
            Toward::Factor => &self.to_factor[e.edge.0],
            Toward::Variable => &self.to_variable[e.edge.0],
        }
    }

    pub fn get(&self, e: DirectedEdge) -> Message {
        self.slot(e).unwrap_or(Message::Uninformative)
    }

    pub fn try_get(&self, e: DirectedEdge) -> Option<Message> {
        *self.slot(e)
    }

    pub fn is_set(&self, e: DirectedEdge) -> bool {
        self.slot(e).is_some()
    }

    pub fn set(&mut self, e: DirectedEdge, m: Message) {
        match e.toward {
            Toward::Factor => self.to_factor[e.edge.0] = Some(m),
            Toward::Variable => self.to_variable[e.edge.0] = Some(m),
        }
    }

    pub fn num_set(&self) -> usize {
        self.to_factor.iter().chain(&self.to_variable).filter(|m| m.is_some()).count()
    }

    pub fn record_diagnostics(&mut self, f: FactorId, d: CorrectionDiagnostics) {
        self.diagnostics.insert(f, d);
    }

    pub fn diagnostics(&self, f: FactorId) -> Option<&CorrectionDiagnostics> {
        self.diagnostics.get(&f)
    }
}

/// Clamped values (observations and point-mass controls) keyed by variable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Assignments {
    values: Vec<Option<f64>>,
}

impl Assignments {
    pub fn new(graph: &FactorGraph) -> Self {
        Assignments {
            values: vec![None; graph.num_variables()],
        }
    }

    pub fn set(&mut self, v: VariableId, value: f64) {
        self.values[v.0] = Some(value);
    }

    pub fn clear(&mut self, v: VariableId) {
        self.values[v.0] = None;
    }

    pub fn get(&self, v: VariableId) -> Option<f64> {
        self.values.get(v.0).copied().flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(m: f64, v: f64) -> Message {
        Message::Gaussian(Gaussian1D::new(m, v).unwrap())
    }

    #[test]
    fn product_rules() {
        let p = Message::product([&g(0.0, 1.0), &g(0.0, 1.0)]).unwrap();
        assert_eq!(p, g(0.0, 0.5));
        let p = Message::product([&g(2.0, 3.0), &Message::Uninformative]).unwrap();
        let pg = p.as_gaussian().unwrap();
        assert!((pg.mean() - 2.0).abs() < 1e-15 && (pg.variance() - 3.0).abs() < 1e-15);
        assert_eq!(
            Message::product([&g(2.0, 3.0), &Message::point_mass(1.5)]).unwrap(),
            Message::point_mass(1.5)
        );
        assert!(Message::product([&Message::point_mass(1.0), &Message::point_mass(2.0)]).is_err());
        assert_eq!(Message::product([]).unwrap(), Message::Uninformative);
    }

    #[test]
    fn improper_factors_cancel() {
        let imp = Message::Improper(Canonical::new(-0.5, 0.0));
        let p = Message::product([&imp, &g(0.0, 0.4)]).unwrap();
        let pg = p.as_gaussian().unwrap();
        assert!((pg.variance() - 0.5).abs() < 1e-12);
        let still = Message::product([&imp, &g(0.0, 4.0)]).unwrap();
        assert!(matches!(still, Message::Improper(_)));
    }

    #[test]
    fn serde_tagging() {
        let s = serde_json::to_string(&Message::point_mass(1.0)).unwrap();
        assert_eq!(s, r#"{"type":"point_mass","value":1.0}"#);
    }
}
