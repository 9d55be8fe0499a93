//! Expert rules: logic functions over literals `[c^(j) = i]`.
//!
//! Rule text grammar (whitespace is insignificant):
//!
//! ```text
//! rule  := expr ("@pi=" FLOAT)?
//! expr  := iff
//! iff   := impl ("<->" impl)*
//! impl  := or ("->" impl)?          right-associative
//! or    := and ("|" and)*
//! and   := unary ("&" unary)*
//! unary := "!" unary | atom
//! atom  := IDENT "=" INT | "(" expr ")" | "TRUE" | "FALSE"
//! ```
//!
//! `IDENT` is either a concept name from the schema or `c<index>`.

use std::fmt::Write as _;

use crate::concept::{Combination, ConceptSchema};
use crate::error::{Error, Result};

/// Expression tree of a rule.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(bool),
    Literal { concept: usize, value: u16 },
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Implies(Box<Expr>, Box<Expr>),
    Iff(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn literal(concept: usize, value: u16) -> Expr {
        Expr::Literal { concept, value }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(e: Expr) -> Expr {
        Expr::Not(Box::new(e))
    }

    pub fn and(a: Expr, b: Expr) -> Expr {
        Expr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Expr, b: Expr) -> Expr {
        Expr::Or(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Expr, b: Expr) -> Expr {
        Expr::Implies(Box::new(a), Box::new(b))
    }

    pub fn iff(a: Expr, b: Expr) -> Expr {
        Expr::Iff(Box::new(a), Box::new(b))
    }

    /// Evaluates the expression on a fully specified value vector.
    pub fn eval(&self, values: &[u16]) -> bool {
        match self {
            Expr::Const(b) => *b,
            Expr::Literal { concept, value } => values[*concept] == *value,
            Expr::Not(a) => !a.eval(values),
            Expr::And(a, b) => a.eval(values) && b.eval(values),
            Expr::Or(a, b) => a.eval(values) || b.eval(values),
            Expr::Implies(a, b) => !a.eval(values) || b.eval(values),
            Expr::Iff(a, b) => a.eval(values) == b.eval(values),
        }
    }

    /// Whether any literal refers to concept `r`.
    pub fn mentions(&self, r: usize) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Literal { concept, .. } => *concept == r,
            Expr::Not(a) => a.mentions(r),
            Expr::And(a, b) | Expr::Or(a, b) | Expr::Implies(a, b) | Expr::Iff(a, b) => {
                a.mentions(r) || b.mentions(r)
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Iff(..) => 1,
            Expr::Implies(..) => 2,
            Expr::Or(..) => 3,
            Expr::And(..) => 4,
            Expr::Not(..) => 5,
            Expr::Const(_) | Expr::Literal { .. } => 6,
        }
    }

    fn write(&self, schema: &ConceptSchema, min_prec: u8, out: &mut String) {
        let paren = self.precedence() < min_prec;
        if paren {
            out.push('(');
        }
        match self {
            Expr::Const(true) => out.push_str("TRUE"),
            Expr::Const(false) => out.push_str("FALSE"),
            Expr::Literal { concept, value } => {
                let _ = write!(out, "{}={}", literal_name(schema, *concept), value);
            }
            Expr::Not(a) => {
                out.push('!');
                a.write(schema, 5, out);
            }
            Expr::And(a, b) => binary(schema, out, a, " & ", b, (4, 5)),
            Expr::Or(a, b) => binary(schema, out, a, " | ", b, (3, 4)),
            Expr::Implies(a, b) => binary(schema, out, a, " -> ", b, (3, 2)),
            Expr::Iff(a, b) => binary(schema, out, a, " <-> ", b, (1, 2)),
        }
        if paren {
            out.push(')');
        }
    }
}

fn binary(schema: &ConceptSchema, out: &mut String, a: &Expr, op: &str, b: &Expr, prec: (u8, u8)) {
    a.write(schema, prec.0, out);
    out.push_str(op);
    b.write(schema, prec.1, out);
}

fn literal_name(schema: &ConceptSchema, r: usize) -> String {
    let name = schema.name(r);
    let is_ident = name
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && name != "TRUE"
        && name != "FALSE";
    if is_ident && schema.resolve(name) == Some(r) {
        name.to_string()
    } else {
        format!("c{r}")
    }
}

/// A rule `g` together with the probability `pi` that it holds.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleExpr {
    pub expr: Expr,
    pub pi: f64,
}

impl RuleExpr {
    /// A hard rule (`pi = 1`).
    pub fn hard(expr: Expr) -> Self {
        RuleExpr { expr, pi: 1.0 }
    }

    pub fn with_pi(expr: Expr, pi: f64) -> Result<Self> {
        if !(pi > 0.0 && pi <= 1.0) {
            return Err(Error::domain(format!("rule probability {pi} outside (0, 1]")));
        }
        Ok(RuleExpr { expr, pi })
    }

    /// The constant TRUE rule.
    pub fn tautology() -> Self {
        RuleExpr::hard(Expr::Const(true))
    }

    pub fn is_hard(&self) -> bool {
        self.pi == 1.0
    }

    /// `g(z)` as a boolean.
    pub fn eval(&self, z: &Combination) -> bool {
        self.expr.eval(z.values())
    }

    /// `pi(z)`: `pi` where `g(z) = 1`, `1 - pi` elsewhere.
    pub fn truth_prob(&self, z: &Combination) -> f64 {
        self.truth_prob_values(z.values())
    }

    pub(crate) fn truth_prob_values(&self, values: &[u16]) -> f64 {
        if self.expr.eval(values) {
            self.pi
        } else {
            1.0 - self.pi
        }
    }

    /// Canonical text form; parses back to the same rule.
    pub fn to_text(&self, schema: &ConceptSchema) -> String {
        let mut out = String::new();
        self.expr.write(schema, 0, &mut out);
        if !self.is_hard() {
            let _ = write!(out, " @pi={}", self.pi);
        }
        out
    }

    /// Checks that every literal is valid for `schema`.
    pub fn check(&self, schema: &ConceptSchema) -> Result<()> {
        fn walk(e: &Expr, schema: &ConceptSchema) -> Result<()> {
            match e {
                Expr::Const(_) => Ok(()),
                Expr::Literal { concept, value } => {
                    if *concept >= schema.len() {
                        return Err(Error::UnknownConcept(format!("c{concept}")));
                    }
                    schema.check_value(*concept, *value as i64).map(|_| ())
                }
                Expr::Not(a) => walk(a, schema),
                Expr::And(a, b) | Expr::Or(a, b) | Expr::Implies(a, b) | Expr::Iff(a, b) => {
                    walk(a, schema)?;
                    walk(b, schema)
                }
            }
        }
        walk(&self.expr, schema)
    }
}

/// Conjunction of hard rules; the empty list gives TRUE.
pub fn conjoin(rules: &[RuleExpr]) -> Result<RuleExpr> {
    if let Some(soft) = rules.iter().find(|r| !r.is_hard()) {
        return Err(Error::domain(format!(
            "cannot conjoin a rule held with probability {}",
            soft.pi
        )));
    }
    let mut iter = rules.iter().map(|r| r.expr.clone());
    let expr = match iter.next() {
        None => Expr::Const(true),
        Some(first) => iter.fold(first, Expr::and),
    };
    Ok(RuleExpr::hard(expr))
}

/// Reduces a rule list to the single rule applied by the model.
///
/// A lone rule is returned as is (it may be soft); several rules must all
/// be hard and are conjoined. An empty list yields `None`.
pub fn combine(rules: &[RuleExpr]) -> Result<Option<RuleExpr>> {
    match rules {
        [] => Ok(None),
        [one] => Ok(Some(one.clone())),
        many => conjoin(many).map(Some),
    }
}

/// Parses rule text against a schema.
pub fn parse_rule(text: &str, schema: &ConceptSchema) -> Result<RuleExpr> {
    let tokens = lex(text)?;
    if tokens.is_empty() {
        return Err(Error::RuleSyntax {
            pos: 1,
            msg: "empty rule".into(),
        });
    }
    let mut parser = Parser {
        tokens,
        idx: 0,
        schema,
        end: text.chars().count() + 1,
    };
    let expr = parser.expr()?;
    let pi = if parser.eat(&Tok::At) {
        match parser.next() {
            Some((Tok::Ident(name), _)) if name == "pi" => {}
            other => return Err(parser.unexpected(other, "`pi` after `@`")),
        }
        parser.expect(&Tok::Eq, "`=` after `@pi`")?;
        match parser.next() {
            Some((Tok::Number(text), pos)) => {
                let pi: f64 = text.parse().map_err(|_| Error::RuleSyntax {
                    pos,
                    msg: format!("bad probability `{text}`"),
                })?;
                if !(pi > 0.0 && pi <= 1.0) {
                    return Err(Error::RuleSyntax {
                        pos,
                        msg: format!("rule probability {pi} outside (0, 1]"),
                    });
                }
                pi
            }
            other => return Err(parser.unexpected(other, "a probability")),
        }
    } else {
        1.0
    };
    if let Some(tok) = parser.next() {
        return Err(parser.unexpected(Some(tok), "end of rule"));
    }
    Ok(RuleExpr { expr, pi })
}

/// Parses a rules file: one rule per line, `#` starts a comment.
pub fn parse_rules_file(text: &str, schema: &ConceptSchema) -> Result<Vec<RuleExpr>> {
    let mut rules = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("");
        if body.trim().is_empty() {
            continue;
        }
        let rule = parse_rule(body, schema).map_err(|e| match e {
            Error::RuleSyntax { pos, msg } => Error::RuleSyntax {
                pos,
                msg: format!("line {}: {msg}", lineno + 1),
            },
            other => other,
        })?;
        rules.push(rule);
    }
    Ok(rules)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Eq,
    Not,
    And,
    Or,
    Arrow,
    DoubleArrow,
    LParen,
    RParen,
    At,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let tok = match c {
            '=' => Tok::Eq,
            '!' => Tok::Not,
            '&' => Tok::And,
            '|' => Tok::Or,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '@' => Tok::At,
            '-' if chars.get(i + 1) == Some(&'>') => {
                i += 1;
                Tok::Arrow
            }
            '<' if chars.get(i + 1) == Some(&'-') && chars.get(i + 2) == Some(&'>') => {
                i += 2;
                Tok::DoubleArrow
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i + 1 < chars.len() && (chars[i + 1].is_ascii_alphanumeric() || chars[i + 1] == '_') {
                    i += 1;
                }
                Tok::Ident(chars[start..=i].iter().collect())
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i + 1 < chars.len() && (chars[i + 1].is_ascii_digit() || chars[i + 1] == '.') {
                    i += 1;
                }
                if i + 1 < chars.len() && matches!(chars[i + 1], 'e' | 'E') {
                    let mut j = i + 2;
                    if j < chars.len() && matches!(chars[j], '+' | '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        while j + 1 < chars.len() && chars[j + 1].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                Tok::Number(chars[start..=i].iter().collect())
            }
            other => {
                return Err(Error::RuleSyntax {
                    pos,
                    msg: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push((tok, pos));
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(Tok, usize)>,
    idx: usize,
    schema: &'a ConceptSchema,
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.idx).map(|(t, _)| t)
    }

    fn next(&mut self) -> Option<(Tok, usize)> {
        let tok = self.tokens.get(self.idx).cloned();
        if tok.is_some() {
            self.idx += 1;
        }
        tok
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.idx += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &Tok, what: &str) -> Result<()> {
        match self.next() {
            Some((t, _)) if &t == tok => Ok(()),
            other => Err(self.unexpected(other, what)),
        }
    }

    fn unexpected(&self, found: Option<(Tok, usize)>, wanted: &str) -> Error {
        match found {
            Some((tok, pos)) => Error::RuleSyntax {
                pos,
                msg: format!("expected {wanted}, found {}", describe(&tok)),
            },
            None => Error::RuleSyntax {
                pos: self.end,
                msg: format!("expected {wanted}, found end of input"),
            },
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.implication()?;
        while self.eat(&Tok::DoubleArrow) {
            let rhs = self.implication()?;
            lhs = Expr::iff(lhs, rhs);
        }
        Ok(lhs)
    }

    fn implication(&mut self) -> Result<Expr> {
        let lhs = self.disjunction()?;
        if self.eat(&Tok::Arrow) {
            let rhs = self.implication()?;
            return Ok(Expr::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn disjunction(&mut self) -> Result<Expr> {
        let mut lhs = self.conjunction()?;
        while self.eat(&Tok::Or) {
            let rhs = self.conjunction()?;
            lhs = Expr::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn conjunction(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while self.eat(&Tok::And) {
            let rhs = self.unary()?;
            lhs = Expr::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(&Tok::Not) {
            return Ok(Expr::not(self.unary()?));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.next() {
            Some((Tok::LParen, _)) => {
                let inner = self.expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some((Tok::Ident(name), pos)) => {
                if self.peek() != Some(&Tok::Eq) {
                    match name.as_str() {
                        "TRUE" => return Ok(Expr::Const(true)),
                        "FALSE" => return Ok(Expr::Const(false)),
                        _ => {}
                    }
                }
                let concept = self
                    .schema
                    .resolve(&name)
                    .ok_or_else(|| Error::UnknownConcept(name.clone()))?;
                self.expect(&Tok::Eq, "`=` after concept name")?;
                let value = match self.next() {
                    Some((Tok::Number(text), vpos)) => {
                        text.parse::<i64>().map_err(|_| Error::RuleSyntax {
                            pos: vpos,
                            msg: format!("concept value `{text}` is not an integer"),
                        })?
                    }
                    other => return Err(self.unexpected(other, "an integer concept value")),
                };
                let value = self.schema.check_value(concept, value).map_err(|e| match e {
                    Error::ValueOutOfRange { .. } => e,
                    _ => Error::RuleSyntax {
                        pos,
                        msg: e.to_string(),
                    },
                })?;
                Ok(Expr::literal(concept, value))
            }
            other => Err(self.unexpected(other, "a literal or `(`")),
        }
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Number(s) => format!("`{s}`"),
        Tok::Eq => "`=`".into(),
        Tok::Not => "`!`".into(),
        Tok::And => "`&`".into(),
        Tok::Or => "`|`".into(),
        Tok::Arrow => "`->`".into(),
        Tok::DoubleArrow => "`<->`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::At => "`@`".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concept::enumerate_combinations;

    fn nodule() -> ConceptSchema {
        ConceptSchema::from_pairs([("diagnosis", 2), ("contour", 3), ("inclusion", 2)]).unwrap()
    }

    fn annotated() -> ConceptSchema {
        ConceptSchema::from_pairs([("target", 2), ("odd", 2), ("below_five", 2), ("mod3", 3)]).unwrap()
    }

    fn z(v: &[u16]) -> Combination {
        Combination(v.to_vec())
    }

    #[test]
    fn parses_simple_implication() {
        let r = parse_rule("c1=2 -> c0=1", &nodule()).unwrap();
        assert_eq!(r.expr, Expr::implies(Expr::literal(1, 2), Expr::literal(0, 1)));
        assert_eq!(r.pi, 1.0);
    }

    #[test]
    fn conjunction_binds_tighter_than_implication() {
        let r = parse_rule("c1=1 & c2=1 -> c0=1", &annotated()).unwrap();
        assert_eq!(
            r.expr,
            Expr::implies(
                Expr::and(Expr::literal(1, 1), Expr::literal(2, 1)),
                Expr::literal(0, 1)
            )
        );
    }

    #[test]
    fn soft_rule_suffix() {
        let r = parse_rule("c0=1 @pi=0.9", &nodule()).unwrap();
        assert_eq!(r.expr, Expr::literal(0, 1));
        assert_eq!(r.pi, 0.9);
        let r = parse_rule("c0=1@ pi = 0.25", &nodule()).unwrap();
        assert_eq!(r.pi, 0.25);
        assert!(parse_rule("c0=1 @pi=0", &nodule()).is_err());
        assert!(parse_rule("c0=1 @pi=1.5", &nodule()).is_err());
        assert!(parse_rule("(c0=1 @pi=0.5)", &nodule()).is_err());
    }

    #[test]
    fn implication_is_right_associative() {
        let r = parse_rule("c0=1 -> c1=1 -> c2=1", &nodule()).unwrap();
        assert_eq!(
            r.expr,
            Expr::implies(
                Expr::literal(0, 1),
                Expr::implies(Expr::literal(1, 1), Expr::literal(2, 1))
            )
        );
    }

    #[test]
    fn precedence_ladder() {
        let s = nodule();
        let r = parse_rule("!c0=1 & c1=1 | c2=1 -> c0=2 <-> c1=3", &s).unwrap();
        let expected = Expr::iff(
            Expr::implies(
                Expr::or(
                    Expr::and(Expr::not(Expr::literal(0, 1)), Expr::literal(1, 1)),
                    Expr::literal(2, 1),
                ),
                Expr::literal(0, 2),
            ),
            Expr::literal(1, 3),
        );
        assert_eq!(r.expr, expected);
    }

    #[test]
    fn names_resolve() {
        let r = parse_rule("contour = 2 -> diagnosis = 1", &nodule()).unwrap();
        assert_eq!(r, parse_rule("c1=2->c0=1", &nodule()).unwrap());
    }

    #[test]
    fn syntax_errors_carry_positions() {
        let s = nodule();
        match parse_rule("c0=1 &", &s) {
            Err(Error::RuleSyntax { pos, .. }) => assert_eq!(pos, 7),
            other => panic!("{other:?}"),
        }
        match parse_rule("c0=1 $ c1=1", &s) {
            Err(Error::RuleSyntax { pos, .. }) => assert_eq!(pos, 6),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_rule("(c0=1", &s), Err(Error::RuleSyntax { .. })));
        assert!(matches!(parse_rule("c0=1.5", &s), Err(Error::RuleSyntax { .. })));
        assert!(matches!(parse_rule("   ", &s), Err(Error::RuleSyntax { .. })));
        assert!(matches!(parse_rule("stroma=1", &s), Err(Error::UnknownConcept(_))));
        assert!(matches!(parse_rule("c7=1", &s), Err(Error::UnknownConcept(_))));
        assert!(matches!(parse_rule("c1=4", &s), Err(Error::ValueOutOfRange { .. })));
        assert!(matches!(parse_rule("c1=0", &s), Err(Error::ValueOutOfRange { .. })));
    }

    #[test]
    fn evaluates_the_nodule_rule() {
        let r = parse_rule("c1=2 -> c0=1", &nodule()).unwrap();
        assert!(!r.eval(&z(&[2, 2, 1])));
        assert!(r.eval(&z(&[1, 2, 2])));
        assert!(r.eval(&z(&[2, 1, 1])));
        assert!(r.eval(&z(&[1, 3, 1])));
    }

    #[test]
    fn tautology_holds_everywhere() {
        let s = nodule();
        let r = parse_rule("c0=1 | !(c0=1)", &s).unwrap();
        assert!(enumerate_combinations(&s).iter().all(|z| r.eval(z)));
        let t = RuleExpr::tautology();
        assert!(enumerate_combinations(&s).iter().all(|z| t.truth_prob(z) == 1.0));
    }

    #[test]
    fn truth_probabilities() {
        let s = nodule();
        let hard = parse_rule("c1=2 -> c0=1", &s).unwrap();
        assert_eq!(hard.truth_prob(&z(&[1, 2, 2])), 1.0);
        assert_eq!(hard.truth_prob(&z(&[2, 2, 1])), 0.0);
        let soft = parse_rule("c1=2 -> c0=1 @pi=0.9", &s).unwrap();
        assert_eq!(soft.truth_prob(&z(&[1, 2, 2])), 0.9);
        assert!((soft.truth_prob(&z(&[2, 2, 1])) - 0.1).abs() < 1e-15);
        let half = parse_rule("c1=2 -> c0=1 @pi=0.5", &s).unwrap();
        assert!(enumerate_combinations(&s).iter().all(|z| half.truth_prob(z) == 0.5));
    }

    #[test]
    fn conjoin_and_combine() {
        let s = annotated();
        let g1 = parse_rule("c1=2 & c2=2 -> c0=2", &s).unwrap();
        assert_eq!(conjoin(std::slice::from_ref(&g1)).unwrap(), g1);
        assert_eq!(conjoin(&[]).unwrap(), RuleExpr::tautology());

        let other = parse_rule("c1=1 & c2=2 -> c0=1", &s).unwrap();
        let g2 = parse_rule("(c1=1 & c2=2 -> c0=1) & (c1=2 & c2=2 -> c0=2)", &s).unwrap();
        assert_eq!(conjoin(&[other.clone(), g1.clone()]).unwrap(), g2);

        let soft = parse_rule("c0=1 @pi=0.8", &s).unwrap();
        assert!(conjoin(&[g1.clone(), soft.clone()]).is_err());
        assert_eq!(combine(std::slice::from_ref(&soft)).unwrap(), Some(soft.clone()));
        assert!(combine(&[g1, soft]).is_err());
        assert_eq!(combine(&[]).unwrap(), None);
    }

    #[test]
    fn rules_file_skips_comments() {
        let s = nodule();
        let text = "# expert knowledge\n\nc1=2 -> c0=1   # grainy implies malignant\n  c2=2 -> c0=1\n";
        let rules = parse_rules_file(text, &s).unwrap();
        assert_eq!(rules.len(), 2);
        let err = parse_rules_file("c0=1\nc0=\n", &s).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn constants_print_and_parse() {
        let s = nodule();
        let r = parse_rule("TRUE & !FALSE", &s).unwrap();
        assert_eq!(r.expr, Expr::and(Expr::Const(true), Expr::not(Expr::Const(false))));
        assert_eq!(parse_rule(&r.to_text(&s), &s).unwrap(), r);
    }

    #[test]
    fn text_form_uses_minimal_parentheses() {
        let s = nodule();
        let r = parse_rule("((c0=1) | (c1=2)) & !(c2=1 -> c0=2)", &s).unwrap();
        assert_eq!(
            r.to_text(&s),
            "(diagnosis=1 | contour=2) & !(inclusion=1 -> diagnosis=2)"
        );
        let r = parse_rule("(c0=1 -> c1=1) -> c2=1", &s).unwrap();
        assert_eq!(r.to_text(&s), "(diagnosis=1 -> contour=1) -> inclusion=1");
    }

    #[test]
    fn mentions_reports_concepts() {
        let r = parse_rule("c1=2 -> c0=1", &nodule()).unwrap();
        assert!(r.expr.mentions(0));
        assert!(!r.expr.mentions(2));
        assert!(!Expr::Const(true).mentions(0));
    }
}
