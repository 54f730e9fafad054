use thiserror::Error;

use super::ast::*;
use super::print::infer_threshold_dim;
use crate::dimensions::{TypeEnv, INFIX_OPS};

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("{line}:{col}: expected {}, found {found}", .expected.join(" or "))]
    Syntax {
        line: usize,
        col: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("{line}:{col}: unknown action `{name}`")]
    UnknownAction {
        name: String,
        line: usize,
        col: usize,
    },
    #[error("{line}:{col}: unknown input `{name}`")]
    UnknownInput {
        name: String,
        line: usize,
        col: usize,
    },
    #[error("{line}:{col}: unknown operator `{name}`")]
    UnknownOperator {
        name: String,
        line: usize,
        col: usize,
    },
    #[error("{line}:{col}: operator `{name}` takes {expected} argument(s), got {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
        line: usize,
        col: usize,
    },
    #[error("{line}:{col}: name `{name}` is used for more than one hole or parameter")]
    DuplicateName {
        name: String,
        line: usize,
        col: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Sym(&'static str),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Num(n) => format!("`{n}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMBOLS: [&str; 18] = [
    "==", "&&", "||", "(", ")", "[", "]", "<", ">", ",", ":", "?", "+", "-", "*", "/", "=", "|",
];

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        let start_col = col;
        if c.is_ascii_alphabetic()
            || c == '_'
            || (c == '#' && chars.get(i + 1).is_some_and(char::is_ascii_digit))
        {
            let s: String = std::iter::once(c)
                .chain(
                    chars[i + 1..]
                        .iter()
                        .copied()
                        .take_while(|c| c.is_ascii_alphanumeric() || *c == '_'),
                )
                .collect();
            i += s.len();
            col += s.len();
            out.push(Spanned {
                tok: Tok::Ident(s),
                line,
                col: start_col,
            });
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            let mut j = i;
            while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
                j += 1;
            }
            if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                let mut k = j + 1;
                if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                    k += 1;
                }
                if k < chars.len() && chars[k].is_ascii_digit() {
                    while k < chars.len() && chars[k].is_ascii_digit() {
                        k += 1;
                    }
                    j = k;
                }
            }
            let s: String = chars[i..j].iter().collect();
            let v: f64 = s.parse().map_err(|_| ParseError::Syntax {
                line,
                col: start_col,
                expected: vec!["number".into()],
                found: format!("`{s}`"),
            })?;
            col += j - i;
            i = j;
            out.push(Spanned {
                tok: Tok::Num(v),
                line,
                col: start_col,
            });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        let sym = SYMBOLS.iter().find(|s| rest.starts_with(**s));
        match sym {
            Some(s) if *s != "|" => {
                i += s.len();
                col += s.len();
                out.push(Spanned {
                    tok: Tok::Sym(s),
                    line,
                    col: start_col,
                });
            }
            _ => {
                return Err(ParseError::Syntax {
                    line,
                    col,
                    expected: vec!["token".into()],
                    found: format!("`{c}`"),
                })
            }
        }
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Spanned>,
    pos: usize,
    env: &'a TypeEnv,
    thresholds: usize,
    names: Vec<String>,
}

type PResult<T> = Result<T, ParseError>;

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn err<T>(&self, expected: &[&str]) -> PResult<T> {
        let (line, col) = self.here();
        Err(ParseError::Syntax {
            line,
            col,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().describe(),
        })
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(&[&format!("`{s}`")])
        }
    }

    fn eat_kw(&mut self, s: &str) -> bool {
        if self.is_kw(s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, s: &str) -> PResult<()> {
        if self.eat_kw(s) {
            Ok(())
        } else {
            self.err(&[&format!("`{s}`")])
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.pos += 1;
                Ok(s)
            }
            _ => self.err(&["identifier"]),
        }
    }

    fn claim_name(&mut self, name: &str, at: (usize, usize)) -> PResult<()> {
        if self.names.iter().any(|n| n == name) {
            return Err(ParseError::DuplicateName {
                name: name.to_string(),
                line: at.0,
                col: at.1,
            });
        }
        self.names.push(name.to_string());
        Ok(())
    }

    fn action(&mut self) -> PResult<String> {
        let at = self.here();
        let name = self.ident()?;
        if !self.env.has_action(&name) {
            return Err(ParseError::UnknownAction {
                name,
                line: at.0,
                col: at.1,
            });
        }
        Ok(name)
    }

    fn result_action(&mut self) -> PResult<String> {
        self.eat_kw("return");
        self.action()
    }

    fn policy(&mut self) -> PResult<Policy> {
        if self.eat_kw("return") {
            let fallback = self.action()?;
            return Ok(Policy {
                branches: Vec::new(),
                fallback,
            });
        }
        self.expect_kw("if")?;
        let mut branches = vec![self.branch()?];
        loop {
            if self.eat_kw("elif") {
                branches.push(self.branch()?);
                continue;
            }
            if self.is_kw("else") && matches!(self.peek_at(1), Tok::Ident(s) if s == "if") {
                self.pos += 2;
                branches.push(self.branch()?);
                continue;
            }
            break;
        }
        self.expect_kw("else")?;
        self.expect_sym(":")?;
        let fallback = self.result_action()?;
        Ok(Policy { branches, fallback })
    }

    fn branch(&mut self) -> PResult<Branch> {
        self.expect_sym("(")?;
        let guard = self.pred()?;
        self.expect_sym(")")?;
        self.expect_sym(":")?;
        let action = self.result_action()?;
        Ok(Branch { guard, action })
    }

    fn pred(&mut self) -> PResult<Pred> {
        let mut lhs = self.conj()?;
        while self.eat_sym("||") {
            let rhs = self.conj()?;
            lhs = Pred::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn conj(&mut self) -> PResult<Pred> {
        let mut lhs = self.atom()?;
        while self.eat_sym("&&") {
            let rhs = self.atom()?;
            lhs = Pred::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn action_ref(&mut self) -> PResult<ActionRef> {
        if self.eat_kw("a_s") {
            return Ok(ActionRef::Current);
        }
        self.action().map(ActionRef::Named)
    }

    fn atom(&mut self) -> PResult<Pred> {
        if matches!(self.peek(), Tok::Ident(_)) && matches!(self.peek_at(1), Tok::Sym("==")) {
            let a = self.action_ref()?;
            self.expect_sym("==")?;
            let b = self.action_ref()?;
            return Ok(Pred::ActionEq(a, b));
        }
        if self.eat_kw("true") {
            return Ok(Pred::True);
        }
        if self.eat_kw("false") {
            return Ok(Pred::False);
        }
        if self.is_sym("?") && !matches!(self.peek_at(2), Tok::Sym(":")) {
            self.pos += 1;
            let at = self.here();
            let name = self.ident()?;
            self.claim_name(&name, at)?;
            return Ok(Pred::Hole(name));
        }
        if self.is_sym("(") {
            let save = (self.pos, self.thresholds, self.names.len());
            self.pos += 1;
            let nested = self.pred().and_then(|p| {
                self.expect_sym(")")?;
                Ok(p)
            });
            match nested {
                Ok(p) if !self.at_expr_continuation() => return Ok(p),
                _ => {
                    self.pos = save.0;
                    self.thresholds = save.1;
                    self.names.truncate(save.2);
                }
            }
        }
        let e = self.expr()?;
        let cmp = if self.eat_sym("<") {
            Cmp::Lt
        } else if self.eat_sym(">") {
            Cmp::Gt
        } else {
            return self.err(&["`<`", "`>`"]);
        };
        let t = self.threshold(&e)?;
        Ok(Pred::Cmp(cmp, e, t))
    }

    fn at_expr_continuation(&self) -> bool {
        matches!(self.peek(), Tok::Sym("<" | ">" | "+" | "-" | "*" | "/"))
    }

    fn threshold(&mut self, lhs: &Expr) -> PResult<Threshold> {
        self.thresholds += 1;
        if self.eat_sym("?") {
            let at = self.here();
            let name = self.ident()?;
            self.claim_name(&name, at)?;
            self.expect_sym(":")?;
            let dim = self.dim()?;
            return Ok(Threshold::Hole { name, dim });
        }
        let at = self.here();
        let name =
            if matches!(self.peek(), Tok::Ident(_)) && matches!(self.peek_at(1), Tok::Sym("=")) {
                let n = self.ident()?;
                self.pos += 1;
                n
            } else {
                positional_name(self.thresholds)
            };
        self.claim_name(&name, at)?;
        let value = self.signed_number()?;
        let dim = if self.eat_sym(":") {
            self.dim()?
        } else {
            infer_threshold_dim(lhs).unwrap_or_default()
        };
        Ok(Threshold::Param { name, value, dim })
    }

    fn signed_number(&mut self) -> PResult<f64> {
        let neg = self.eat_sym("-");
        match self.peek().clone() {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(if neg { -v } else { v })
            }
            _ => self.err(&["number"]),
        }
    }

    fn int(&mut self) -> PResult<i32> {
        let v = self.signed_number()?;
        if v.fract() != 0.0 || v.abs() > i32::MAX as f64 {
            return self.err(&["integer exponent"]);
        }
        Ok(v as i32)
    }

    fn dim(&mut self) -> PResult<Dimension> {
        self.expect_sym("[")?;
        let l = self.int()?;
        self.expect_sym(",")?;
        let t = self.int()?;
        self.expect_sym(",")?;
        let m = self.int()?;
        self.expect_sym("]")?;
        Ok(Dimension::new(l, t, m))
    }

    fn expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat_sym("+") {
                "+"
            } else if self.eat_sym("-") {
                "-"
            } else {
                break;
            };
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut lhs = self.factor()?;
        loop {
            let op = if self.eat_sym("*") {
                "*"
            } else if self.eat_sym("/") {
                "/"
            } else {
                break;
            };
            let rhs = self.factor()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Sym("(") => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Sym("?") => {
                self.pos += 1;
                let at = self.here();
                let name = self.ident()?;
                self.claim_name(&name, at)?;
                self.expect_sym(":")?;
                let vector = self.eat_kw("V");
                let d = self.dim()?;
                let ty = if vector {
                    ValueType::Vector(d)
                } else {
                    ValueType::Scalar(d)
                };
                Ok(Expr::Hole { name, ty })
            }
            Tok::Sym("<") => {
                self.pos += 1;
                let x = self.signed_number()?;
                self.expect_sym(",")?;
                let y = self.signed_number()?;
                self.expect_sym(">")?;
                let d = if self.eat_sym(":") {
                    self.dim()?
                } else {
                    Dimension::DIMENSIONLESS
                };
                Ok(Expr::Const {
                    value: Value::Vector([x, y]),
                    ty: ValueType::Vector(d),
                })
            }
            Tok::Sym("-") | Tok::Num(_) => {
                let v = self.signed_number()?;
                let d = if self.eat_sym(":") {
                    self.dim()?
                } else {
                    Dimension::DIMENSIONLESS
                };
                Ok(Expr::scalar(v, d))
            }
            Tok::Ident(name) => {
                let at = self.here();
                self.pos += 1;
                if self.eat_sym("(") {
                    let mut args = vec![self.expr()?];
                    while self.eat_sym(",") {
                        args.push(self.expr()?);
                    }
                    self.expect_sym(")")?;
                    let sig = self
                        .env
                        .op(&name)
                        .ok_or_else(|| ParseError::UnknownOperator {
                            name: name.clone(),
                            line: at.0,
                            col: at.1,
                        })?;
                    if sig.arity != args.len() {
                        return Err(ParseError::Arity {
                            name,
                            expected: sig.arity,
                            found: args.len(),
                            line: at.0,
                            col: at.1,
                        });
                    }
                    let mut it = args.into_iter();
                    let a = it.next().unwrap();
                    Ok(match it.next() {
                        Some(b) => Expr::binary(name, a, b),
                        None => Expr::unary(name, a),
                    })
                } else {
                    match self.env.inputs.get(&name) {
                        Some(ty) => Ok(Expr::Var { name, ty: *ty }),
                        None => Err(ParseError::UnknownInput {
                            name,
                            line: at.0,
                            col: at.1,
                        }),
                    }
                }
            }
            _ => self.err(&["expression"]),
        }
    }
}

fn parser<'a>(text: &str, env: &'a TypeEnv) -> PResult<Parser<'a>> {
    let toks = lex(text)?;
    Ok(Parser {
        toks,
        pos: 0,
        env,
        thresholds: 0,
        names: Vec::new(),
    })
}

/// Parses a policy or sketch in the concrete syntax.
pub fn parse_policy(text: &str, env: &TypeEnv) -> Result<Policy, ParseError> {
    let mut p = parser(text, env)?;
    let policy = p.policy()?;
    if !matches!(p.peek(), Tok::Eof) {
        return p.err(&["end of input"]);
    }
    Ok(policy)
}

/// Parses a standalone predicate; bare thresholds are named by position.
pub fn parse_pred(text: &str, env: &TypeEnv) -> Result<Pred, ParseError> {
    let mut p = parser(text, env)?;
    let pred = p.pred()?;
    if !matches!(p.peek(), Tok::Eof) {
        return p.err(&["end of input"]);
    }
    Ok(pred)
}

/// Parses a standalone expression.
pub fn parse_expr(text: &str, env: &TypeEnv) -> Result<Expr, ParseError> {
    let mut p = parser(text, env)?;
    let e = p.expr()?;
    if !matches!(p.peek(), Tok::Eof) {
        return p.err(&["end of input"]);
    }
    Ok(e)
}

pub(crate) fn is_infix(op: &str) -> bool {
    INFIX_OPS.contains(&op)
}
