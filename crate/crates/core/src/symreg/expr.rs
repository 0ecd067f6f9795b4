//! Expression trees stored in prefix order.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formula::{ObservationRecord, Var};

const LOG_FLOOR: f64 = 1e-12;
const DIV_FLOOR: f64 = 1e-12;
const EXP_CAP: f64 = 50.0;
/// Every intermediate is saturated here so products of two stay finite.
const VALUE_CAP: f64 = 1e150;

/// Variables the search may reference.
pub const SEARCH_VARS: [Var; 8] = [
    Var::Gamma,
    Var::LogN,
    Var::LogNComp,
    Var::Bits,
    Var::RhoS,
    Var::RhoEff,
    Var::SvdRank,
    Var::Entropy,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnOp {
    Neg,
    Inv,
    Sqrt,
    Log,
    Exp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl UnOp {
    pub const ALL: [UnOp; 5] = [UnOp::Neg, UnOp::Inv, UnOp::Sqrt, UnOp::Log, UnOp::Exp];

    pub fn name(self) -> &'static str {
        match self {
            UnOp::Neg => "neg",
            UnOp::Inv => "inv",
            UnOp::Sqrt => "sqrt",
            UnOp::Log => "log",
            UnOp::Exp => "exp",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            UnOp::Neg => -x,
            UnOp::Inv => protected_div(1.0, x),
            UnOp::Sqrt => x.abs().sqrt(),
            UnOp::Log => x.abs().max(LOG_FLOOR).ln(),
            UnOp::Exp => x.min(EXP_CAP).exp(),
        }
    }

    pub fn is_nonlinear(self) -> bool {
        !matches!(self, UnOp::Neg)
    }
}

impl BinOp {
    pub const ALL: [BinOp; 4] = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div];

    pub fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }

    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => protected_div(a, b),
        }
    }
}

fn protected_div(a: f64, b: f64) -> f64 {
    let d = if b.abs() < DIV_FLOOR {
        DIV_FLOOR.copysign(if b == 0.0 { 1.0 } else { b })
    } else {
        b
    };
    a / d
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Var(Var),
    Const(f64),
    Unary(UnOp),
    Binary(BinOp),
}

impl Node {
    pub fn arity(self) -> usize {
        match self {
            Node::Var(_) | Node::Const(_) => 0,
            Node::Unary(_) => 1,
            Node::Binary(_) => 2,
        }
    }
}

/// A well-formed prefix expression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Expression {
    nodes: Vec<Node>,
}

impl Expression {
    pub fn new(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() || subtree_end(&nodes, 0) != Some(nodes.len()) {
            return Err(Error::InvalidInput("malformed expression".into()));
        }
        Ok(Expression { nodes })
    }

    pub(crate) fn from_nodes_unchecked(nodes: Vec<Node>) -> Self {
        debug_assert_eq!(subtree_end(&nodes, 0), Some(nodes.len()));
        Expression { nodes }
    }

    pub fn var(v: Var) -> Self {
        Expression {
            nodes: vec![Node::Var(v)],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> (usize, usize) {
            match nodes[i] {
                Node::Var(_) | Node::Const(_) => (1, i + 1),
                Node::Unary(_) => {
                    let (d, next) = go(nodes, i + 1);
                    (d + 1, next)
                }
                Node::Binary(_) => {
                    let (da, mid) = go(nodes, i + 1);
                    let (db, next) = go(nodes, mid);
                    (da.max(db) + 1, next)
                }
            }
        }
        go(&self.nodes, 0).0
    }

    pub fn variables(&self) -> BTreeSet<Var> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Var(v) => Some(*v),
                _ => None,
            })
            .collect()
    }

    /// log, exp, sqrt and inv nodes, plus divisions whose denominator
    /// references a variable.
    pub fn nonlinear_count(&self) -> usize {
        let mut count = 0;
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Unary(op) if op.is_nonlinear() => count += 1,
                Node::Binary(BinOp::Div) => {
                    let mid = subtree_end(&self.nodes, i + 1).expect("well-formed");
                    let end = subtree_end(&self.nodes, mid).expect("well-formed");
                    if self.nodes[mid..end]
                        .iter()
                        .any(|n| matches!(n, Node::Var(_)))
                    {
                        count += 1;
                    }
                }
                _ => {}
            }
        }
        count
    }

    /// Evaluates with `lookup` supplying variable values.
    pub fn eval_with(&self, lookup: &impl Fn(Var) -> f64) -> f64 {
        let mut stack: Vec<f64> = Vec::with_capacity(self.nodes.len());
        for node in self.nodes.iter().rev() {
            let v = match *node {
                Node::Var(v) => lookup(v),
                Node::Const(c) => c,
                Node::Unary(op) => {
                    let a = stack.pop().expect("well-formed");
                    op.apply(a)
                }
                Node::Binary(op) => {
                    let a = stack.pop().expect("well-formed");
                    let b = stack.pop().expect("well-formed");
                    op.apply(a, b)
                }
            };
            stack.push(v.clamp(-VALUE_CAP, VALUE_CAP));
        }
        stack[0]
    }

    /// Index one past the subtree rooted at `i`.
    pub(crate) fn subtree_end(&self, i: usize) -> usize {
        subtree_end(&self.nodes, i).expect("well-formed")
    }
}

fn subtree_end(nodes: &[Node], start: usize) -> Option<usize> {
    let mut need = 1usize;
    let mut i = start;
    while need > 0 {
        let node = nodes.get(i)?;
        need = need - 1 + node.arity();
        i += 1;
    }
    Some(i)
}

pub fn eval_expr(expr: &Expression, record: &ObservationRecord) -> Result<f64> {
    for v in expr.variables() {
        if record.get(v).is_none() {
            return Err(Error::MissingField { field: v.name() });
        }
    }
    Ok(expr.eval_with(&|v| record.get(v).unwrap_or(f64::NAN)))
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn go(
            nodes: &[Node],
            i: usize,
            f: &mut fmt::Formatter<'_>,
        ) -> std::result::Result<usize, fmt::Error> {
            match nodes[i] {
                Node::Var(v) => {
                    f.write_str(v.name())?;
                    Ok(i + 1)
                }
                Node::Const(c) => {
                    write!(f, "{c:?}")?;
                    Ok(i + 1)
                }
                Node::Unary(op) => {
                    write!(f, "{}(", op.name())?;
                    let next = go(nodes, i + 1, f)?;
                    f.write_str(")")?;
                    Ok(next)
                }
                Node::Binary(op) => {
                    write!(f, "{}(", op.name())?;
                    let mid = go(nodes, i + 1, f)?;
                    f.write_str(", ")?;
                    let next = go(nodes, mid, f)?;
                    f.write_str(")")?;
                    Ok(next)
                }
            }
        }
        go(&self.nodes, 0, f).map(|_| ())
    }
}

impl From<Expression> for String {
    fn from(e: Expression) -> String {
        e.to_string()
    }
}

impl TryFrom<String> for Expression {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for Expression {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut p = Parser {
            src: s,
            pos: 0,
            nodes: Vec::new(),
        };
        p.expr()?;
        p.skip_ws();
        if p.pos != s.len() {
            return Err(p.error("trailing input"));
        }
        Expression::new(p.nodes)
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    nodes: Vec<Node>,
}

impl Parser<'_> {
    fn error(&self, what: &str) -> Error {
        Error::InvalidInput(format!(
            "cannot parse expression at byte {}: {what}",
            self.pos
        ))
    }

    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: char) -> Result<()> {
        self.skip_ws();
        if self.src[self.pos..].starts_with(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected `{c}`")))
        }
    }

    fn token(&mut self) -> &str {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let len = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-' | '+')))
            .unwrap_or(rest.len());
        self.pos += len;
        &rest[..len]
    }

    fn expr(&mut self) -> Result<()> {
        let tok = self.token().to_string();
        if tok.is_empty() {
            return Err(self.error("expected a term"));
        }
        if let Some(op) = UnOp::ALL.iter().find(|o| o.name() == tok) {
            self.nodes.push(Node::Unary(*op));
            self.eat('(')?;
            self.expr()?;
            return self.eat(')');
        }
        if let Some(op) = BinOp::ALL.iter().find(|o| o.name() == tok) {
            self.nodes.push(Node::Binary(*op));
            self.eat('(')?;
            self.expr()?;
            self.eat(',')?;
            self.expr()?;
            return self.eat(')');
        }
        if let Some(v) = SEARCH_VARS.iter().find(|v| v.name() == tok) {
            self.nodes.push(Node::Var(*v));
            return Ok(());
        }
        match tok.parse::<f64>() {
            Ok(c) if c.is_finite() => {
                self.nodes.push(Node::Const(c));
                Ok(())
            }
            _ => Err(self.error(&format!("unknown symbol `{tok}`"))),
        }
    }
}
