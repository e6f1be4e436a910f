use ccmp::gaussian::multiply;
use ccmp::graph::{run_schedule, DirectedEdge, EdgeId, variable_belief, Assignments, ModelSpec, Rule, Schedule, ScheduleError, SignPattern};
use ccmp::{FactorGraph, Gaussian1D, Message, MessageBoard, NodeKind};
use proptest::prelude::*;

fn g(m: f64, v: f64) -> Gaussian1D {
    Gaussian1D::new(m, v).unwrap()
}

/// `x ~ p, y = x + u, u ~ q, y -> z via N(·, v), likelihood on z`.
fn chain(p: Gaussian1D, q: Gaussian1D, v: f64, like: Gaussian1D) -> (FactorGraph, Schedule) {
    let mut spec = ModelSpec::default();
    spec.variable("x")
        .variable("u")
        .variable("y")
        .variable("z")
        .factor("px", NodeKind::Prior(p), &["x"])
        .factor("pu", NodeKind::Prior(q), &["u"])
        .factor("add", NodeKind::Addition(SignPattern::SUM), &["x", "u", "y"])
        .factor("n", NodeKind::Gaussian { variance: v }, &["y", "z"])
        .factor("lz", NodeKind::GoalPrior(like), &["z"]);
    let graph = FactorGraph::build(&spec).unwrap();
    let v = |n: &str| graph.variable_id(n).unwrap();
    let f = |n: &str| graph.factor_id(n).unwrap();
    let mut s = Schedule::new();
    for (fac, var, label) in [
        ("px", "x", "1"),
        ("pu", "u", "2"),
        ("add", "y", "3"),
        ("n", "z", "4"),
        ("lz", "z", "A"),
        ("n", "y", "B"),
        ("add", "x", "C"),
        ("add", "u", "D"),
    ] {
        s.push(graph.to_variable(f(fac), v(var)).unwrap(), Rule::SumProduct, label);
    }
    s.validate(&graph).unwrap();
    (graph, s)
}

fn all_messages(graph: &FactorGraph, board: &MessageBoard) -> Vec<Message> {
    (0..graph.num_edges())
        .flat_map(|e| {
            let e = EdgeId(e);
            [
                board.get(DirectedEdge::to_factor(e)),
                board.get(DirectedEdge::to_variable(e)),
            ]
        })
        .collect()
}

fn close(a: &Message, b: &Message, tol: f64) -> bool {
    match (a, b) {
        (Message::Gaussian(x), Message::Gaussian(y)) => {
            (x.mean() - y.mean()).abs() <= tol && (x.variance() - y.variance()).abs() <= tol
        }
        _ => a == b,
    }
}

#[test]
fn beliefs_fold_incident_messages() {
    let (graph, s) = chain(g(0.5, 1.0), g(-0.3, 0.4), 0.2, g(1.0, 0.3));
    let mut board = MessageBoard::new(&graph);
    run_schedule(&graph, &mut board, &Assignments::new(&graph), &s).unwrap();
    // y has three neighbours' worth of information: forward via add, backward via n.
    let y = graph.variable_id("y").unwrap();
    let incoming: Vec<Gaussian1D> = graph
        .factor_neighbors(y)
        .filter_map(|f| board.get(graph.to_variable(f, y).unwrap()).as_gaussian())
        .collect();
    let folded = incoming[1..].iter().fold(incoming[0], |acc, m| multiply(&acc, m));
    let b = variable_belief(&graph, &board, y).unwrap();
    assert!((b.mean() - folded.mean()).abs() < 1e-12);
    assert!((b.variance() - folded.variance()).abs() < 1e-12);
}

#[test]
fn closed_form_chain_marginal() {
    // Linear-Gaussian conditioning in closed form: z = x + u + n, observe via likelihood.
    let (px, pu, v, lz) = (g(0.5, 1.0), g(-0.3, 0.4), 0.2, g(1.0, 0.3));
    let (graph, s) = chain(px, pu, v, lz);
    let mut board = MessageBoard::new(&graph);
    run_schedule(&graph, &mut board, &Assignments::new(&graph), &s).unwrap();
    let prior_z = (px.mean() + pu.mean(), px.variance() + pu.variance() + v);
    let k = px.variance() / (prior_z.1 + lz.variance());
    let x_mean = px.mean() + k * (lz.mean() - prior_z.0);
    let x_var = px.variance() - k * px.variance();
    let b = variable_belief(&graph, &board, graph.variable_id("x").unwrap()).unwrap();
    assert!((b.mean() - x_mean).abs() < 1e-12, "{} vs {x_mean}", b.mean());
    assert!((b.variance() - x_var).abs() < 1e-12);
}

#[test]
fn improper_belief_is_reported() {
    let mut spec = ModelSpec::default();
    spec.variable("x").factor("end", NodeKind::Terminal, &["x"]);
    let graph = FactorGraph::build(&spec).unwrap();
    let board = MessageBoard::new(&graph);
    assert!(matches!(
        variable_belief(&graph, &board, graph.variable_id("x").unwrap()),
        Err(ScheduleError::ImproperBelief(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Rerunning at the fixed point leaves every message unchanged.
    #[test]
    fn rerun_is_a_fixed_point(
        m0 in -3.0..3.0f64, lv0 in -1.0..1.0f64,
        m1 in -3.0..3.0f64, lv1 in -1.0..1.0f64,
        lv in -1.5..0.5f64,
        m2 in -3.0..3.0f64, lv2 in -1.0..1.0f64,
    ) {
        let (graph, s) = chain(g(m0, 10f64.powf(lv0)), g(m1, 10f64.powf(lv1)), 10f64.powf(lv), g(m2, 10f64.powf(lv2)));
        let asg = Assignments::new(&graph);
        let mut board = MessageBoard::new(&graph);
        run_schedule(&graph, &mut board, &asg, &s).unwrap();
        let first = all_messages(&graph, &board);
        run_schedule(&graph, &mut board, &asg, &s).unwrap();
        let second = all_messages(&graph, &board);
        for (a, b) in first.iter().zip(&second) {
            prop_assert!(close(a, b, 1e-10), "{a:?} vs {b:?}");
        }
    }

    /// Beliefs do not depend on which sweep direction ran first.
    #[test]
    fn belief_is_order_independent(m0 in -3.0..3.0f64, m2 in -3.0..3.0f64, lv in -1.0..1.0f64) {
        let (graph, s) = chain(g(m0, 1.0), g(0.0, 0.5), 10f64.powf(lv), g(m2, 0.7));
        let mut reversed = Schedule::new();
        let entries = s.entries.clone();
        for e in entries.iter().rev() {
            reversed.push(e.edge, e.rule, e.label.clone());
        }
        let asg = Assignments::new(&graph);
        let mut a = MessageBoard::new(&graph);
        run_schedule(&graph, &mut a, &asg, &s).unwrap();
        let mut b = MessageBoard::new(&graph);
        // In reversed order information advances one level per pass; the
        // tree is three levels deep.
        for _ in 0..4 {
            run_schedule(&graph, &mut b, &asg, &reversed).unwrap();
        }
        for name in ["x", "u", "y", "z"] {
            let v = graph.variable_id(name).unwrap();
            let (ba, bb) = (variable_belief(&graph, &a, v).unwrap(), variable_belief(&graph, &b, v).unwrap());
            prop_assert!((ba.mean() - bb.mean()).abs() < 1e-10 && (ba.variance() - bb.variance()).abs() < 1e-10);
        }
    }
}
