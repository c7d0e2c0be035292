//! Dimensional validation of observable expressions.
//!
//! Observables are parsed with the field grammar extended by dimensioned
//! constants, `const(<value>, "<dim-expr>")`; bare numerals stay
//! dimensionless. A dimension is synthesized bottom-up: products add
//! exponent vectors, quotients subtract, integer powers scale, sums and
//! differences require equal vectors, and transcendental functions demand
//! dimensionless arguments. The synthesized dimension must equal the
//! declared one. Validated expressions lower to plain core fields by
//! erasing the annotations.

use std::sync::Arc;

use dimmech_core::expr::{ChartDomain, Expr, ScalarField};
use dimmech_core::measurand::{parse_dimension, Dimension, MeasurandSpace};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DimCheckError {
    #[error("parse error in `{observable}` at position {position}: {message}")]
    Parse {
        observable: String,
        position: usize,
        message: String,
    },
    #[error("unknown variable `{name}` in `{observable}`")]
    UnknownVariable { observable: String, name: String },
    #[error(
        "dimension mismatch in `{observable}` at {path}: expected [{expected}], found [{found}]"
    )]
    DimensionMismatch {
        observable: String,
        path: String,
        expected: String,
        found: String,
    },
    #[error("dimension overflow in `{observable}` at {path}")]
    Overflow { observable: String, path: String },
}

/// Expression AST with dimensioned constants.
#[derive(Debug, Clone)]
enum Ast {
    Const(f64),
    DimConst(f64, Dimension),
    Var(usize),
    Add(Box<Ast>, Box<Ast>),
    Sub(Box<Ast>, Box<Ast>),
    Mul(Box<Ast>, Box<Ast>),
    Div(Box<Ast>, Box<Ast>),
    Neg(Box<Ast>),
    Pow(Box<Ast>, i32),
    Fun(&'static str, Box<Ast>),
}

struct Ctx<'a> {
    observable: &'a str,
    space: &'a Arc<MeasurandSpace>,
    coord_dims: &'a [Dimension],
}

impl Ast {
    /// Bottom-up dimension synthesis; `path` names the offending node on
    /// failure.
    fn synthesize(&self, ctx: &Ctx, path: &str) -> Result<Dimension, DimCheckError> {
        let mismatch = |p: &str, expected: &Dimension, found: &Dimension| {
            DimCheckError::DimensionMismatch {
                observable: ctx.observable.to_string(),
                path: p.to_string(),
                expected: expected.to_string(),
                found: found.to_string(),
            }
        };
        match self {
            Ast::Const(_) => Ok(ctx.space.dimensionless()),
            Ast::DimConst(_, d) => Ok(d.clone()),
            Ast::Var(i) => Ok(ctx.coord_dims[*i].clone()),
            Ast::Add(a, b) | Ast::Sub(a, b) => {
                let da = a.synthesize(ctx, &format!("{path}.lhs"))?;
                let db = b.synthesize(ctx, &format!("{path}.rhs"))?;
                if da != db {
                    return Err(mismatch(path, &da, &db));
                }
                Ok(da)
            }
            Ast::Mul(a, b) => {
                let da = a.synthesize(ctx, &format!("{path}.lhs"))?;
                let db = b.synthesize(ctx, &format!("{path}.rhs"))?;
                da.mul(&db).map_err(|_| DimCheckError::Overflow {
                    observable: ctx.observable.to_string(),
                    path: path.to_string(),
                })
            }
            Ast::Div(a, b) => {
                let da = a.synthesize(ctx, &format!("{path}.lhs"))?;
                let db = b.synthesize(ctx, &format!("{path}.rhs"))?;
                da.div(&db).map_err(|_| DimCheckError::Overflow {
                    observable: ctx.observable.to_string(),
                    path: path.to_string(),
                })
            }
            Ast::Neg(a) => a.synthesize(ctx, &format!("{path}.neg")),
            Ast::Pow(a, k) => {
                let da = a.synthesize(ctx, &format!("{path}.base"))?;
                da.pow(*k as i64).map_err(|_| DimCheckError::Overflow {
                    observable: ctx.observable.to_string(),
                    path: path.to_string(),
                })
            }
            Ast::Fun(name, a) => {
                let da = a.synthesize(ctx, &format!("{path}.{name}"))?;
                if !da.is_dimensionless() {
                    return Err(mismatch(
                        &format!("{path}.{name}"),
                        &ctx.space.dimensionless(),
                        &da,
                    ));
                }
                Ok(ctx.space.dimensionless())
            }
        }
    }

    /// Erases dimension annotations, producing a plain field expression.
    fn lower(&self) -> Expr {
        match self {
            Ast::Const(c) | Ast::DimConst(c, _) => Expr::constant(*c),
            Ast::Var(i) => Expr::var(*i),
            Ast::Add(a, b) => Expr::add(a.lower(), b.lower()),
            Ast::Sub(a, b) => Expr::sub(a.lower(), b.lower()),
            Ast::Mul(a, b) => Expr::mul(a.lower(), b.lower()),
            Ast::Div(a, b) => Expr::div(a.lower(), b.lower()),
            Ast::Neg(a) => Expr::neg(a.lower()),
            Ast::Pow(a, k) => Expr::powi(a.lower(), *k),
            Ast::Fun(name, a) => match *name {
                "sin" => Expr::sin(a.lower()),
                "cos" => Expr::cos(a.lower()),
                "exp" => Expr::exp(a.lower()),
                _ => Expr::log(a.lower()),
            },
        }
    }
}

/// A dimensionally validated observable: the lowered field plus its
/// synthesized dimension.
#[derive(Debug)]
pub struct CheckedObservable {
    pub field: ScalarField,
    pub dimension: Dimension,
}

/// Parses, synthesizes and verifies an observable against its declared
/// dimension, then lowers it to a core field.
pub fn check_observable(
    name: &str,
    src: &str,
    declared: &str,
    chart: &Arc<ChartDomain>,
    space: &Arc<MeasurandSpace>,
    coord_dims: &[Dimension],
) -> Result<CheckedObservable, DimCheckError> {
    let ast = parse(src, chart, space).map_err(|e| attach(name, e))?;
    let ctx = Ctx {
        observable: name,
        space,
        coord_dims,
    };
    let synthesized = ast.synthesize(&ctx, name)?;
    let declared_dim =
        parse_dimension(declared, space).map_err(|e| DimCheckError::Parse {
            observable: name.to_string(),
            position: match &e {
                dimmech_core::measurand::MeasurandError::ParseError { position, .. } => *position,
                _ => 0,
            },
            message: e.to_string(),
        })?;
    if synthesized != declared_dim {
        return Err(DimCheckError::DimensionMismatch {
            observable: name.to_string(),
            path: name.to_string(),
            expected: declared_dim.to_string(),
            found: synthesized.to_string(),
        });
    }
    Ok(CheckedObservable {
        field: ScalarField::new(chart, ast.lower()),
        dimension: synthesized,
    })
}

#[derive(Debug)]
enum RawError {
    Parse { position: usize, message: String },
    UnknownVariable(String),
}

fn attach(name: &str, e: RawError) -> DimCheckError {
    match e {
        RawError::Parse { position, message } => DimCheckError::Parse {
            observable: name.to_string(),
            position,
            message,
        },
        RawError::UnknownVariable(v) => DimCheckError::UnknownVariable {
            observable: name.to_string(),
            name: v,
        },
    }
}

// Recursive-descent parser for the extended grammar. Mirrors the core
// field grammar and adds `const(NUMBER, "dim-expr")` and string literals
// (inside `const` only).

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Number(f64),
    Name(String),
    Str(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, RawError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut pos = 0usize;
    while pos < chars.len() {
        let c = chars[pos];
        if c.is_whitespace() {
            pos += 1;
            continue;
        }
        let start = pos;
        let tok = match c {
            '+' => {
                pos += 1;
                Tok::Plus
            }
            '-' => {
                pos += 1;
                Tok::Minus
            }
            '*' => {
                pos += 1;
                Tok::Star
            }
            '/' => {
                pos += 1;
                Tok::Slash
            }
            '^' => {
                pos += 1;
                Tok::Caret
            }
            '(' => {
                pos += 1;
                Tok::LParen
            }
            ')' => {
                pos += 1;
                Tok::RParen
            }
            ',' => {
                pos += 1;
                Tok::Comma
            }
            '"' => {
                pos += 1;
                let s0 = pos;
                while pos < chars.len() && chars[pos] != '"' {
                    pos += 1;
                }
                if pos == chars.len() {
                    return Err(RawError::Parse {
                        position: start,
                        message: "unterminated string".into(),
                    });
                }
                let s: String = chars[s0..pos].iter().collect();
                pos += 1;
                Tok::Str(s)
            }
            c if c.is_ascii_digit() || c == '.' => {
                while pos < chars.len()
                    && (chars[pos].is_ascii_digit()
                        || chars[pos] == '.'
                        || chars[pos] == 'e'
                        || chars[pos] == 'E'
                        || ((chars[pos] == '+' || chars[pos] == '-')
                            && pos > start
                            && (chars[pos - 1] == 'e' || chars[pos - 1] == 'E')))
                {
                    pos += 1;
                }
                let text: String = chars[start..pos].iter().collect();
                Tok::Number(text.parse().map_err(|_| RawError::Parse {
                    position: start,
                    message: format!("malformed number `{text}`"),
                })?)
            }
            c if c.is_alphabetic() || c == '_' => {
                while pos < chars.len() && (chars[pos].is_alphanumeric() || chars[pos] == '_') {
                    pos += 1;
                }
                Tok::Name(chars[start..pos].iter().collect())
            }
            other => {
                return Err(RawError::Parse {
                    position: pos,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push((start, tok));
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    chart: &'a Arc<ChartDomain>,
    space: &'a Arc<MeasurandSpace>,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }
    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|(p, _)| *p).unwrap_or(self.end)
    }
    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }
    fn expect(&mut self, t: Tok, what: &str) -> Result<(), RawError> {
        let position = self.here();
        match self.bump() {
            Some(got) if got == t => Ok(()),
            _ => Err(RawError::Parse {
                position,
                message: format!("expected {what}"),
            }),
        }
    }

    fn expr(&mut self) -> Result<Ast, RawError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    acc = Ast::Add(Box::new(acc), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.bump();
                    acc = Ast::Sub(Box::new(acc), Box::new(self.term()?));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Ast, RawError> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.bump();
                    acc = Ast::Mul(Box::new(acc), Box::new(self.factor()?));
                }
                Some(Tok::Slash) => {
                    self.bump();
                    acc = Ast::Div(Box::new(acc), Box::new(self.factor()?));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Ast, RawError> {
        let base = self.base()?;
        if let Some(Tok::Caret) = self.peek() {
            self.bump();
            let position = self.here();
            let mut sign = 1i64;
            match self.peek() {
                Some(Tok::Minus) => {
                    self.bump();
                    sign = -1;
                }
                Some(Tok::Plus) => {
                    self.bump();
                }
                _ => {}
            }
            match self.bump() {
                Some(Tok::Number(v)) if v.fract() == 0.0 => {
                    Ok(Ast::Pow(Box::new(base), (sign * v as i64) as i32))
                }
                _ => Err(RawError::Parse {
                    position,
                    message: "expected an integer exponent after `^`".into(),
                }),
            }
        } else {
            Ok(base)
        }
    }

    fn base(&mut self) -> Result<Ast, RawError> {
        let position = self.here();
        match self.bump() {
            Some(Tok::Number(v)) => Ok(Ast::Const(v)),
            Some(Tok::Name(name)) => {
                if let Some(Tok::LParen) = self.peek() {
                    self.bump();
                    if name == "const" {
                        let vpos = self.here();
                        let neg = matches!(self.peek(), Some(Tok::Minus));
                        if neg {
                            self.bump();
                        }
                        let value = match self.bump() {
                            Some(Tok::Number(v)) => {
                                if neg {
                                    -v
                                } else {
                                    v
                                }
                            }
                            _ => {
                                return Err(RawError::Parse {
                                    position: vpos,
                                    message: "const() expects a numeric first argument".into(),
                                })
                            }
                        };
                        self.expect(Tok::Comma, "`,`")?;
                        let spos = self.here();
                        let dim_src = match self.bump() {
                            Some(Tok::Str(s)) => s,
                            _ => {
                                return Err(RawError::Parse {
                                    position: spos,
                                    message: "const() expects a quoted dimension expression"
                                        .into(),
                                })
                            }
                        };
                        self.expect(Tok::RParen, "`)`")?;
                        let dim = parse_dimension(&dim_src, self.space).map_err(|e| {
                            RawError::Parse {
                                position: spos,
                                message: e.to_string(),
                            }
                        })?;
                        Ok(Ast::DimConst(value, dim))
                    } else {
                        let arg = self.expr()?;
                        self.expect(Tok::RParen, "`)`")?;
                        match name.as_str() {
                            "sin" => Ok(Ast::Fun("sin", Box::new(arg))),
                            "cos" => Ok(Ast::Fun("cos", Box::new(arg))),
                            "exp" => Ok(Ast::Fun("exp", Box::new(arg))),
                            "log" => Ok(Ast::Fun("log", Box::new(arg))),
                            other => Err(RawError::Parse {
                                position,
                                message: format!("unknown function `{other}`"),
                            }),
                        }
                    }
                } else {
                    match self.chart.index_of(&name) {
                        Some(i) => Ok(Ast::Var(i)),
                        None => Err(RawError::UnknownVariable(name)),
                    }
                }
            }
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Tok::Minus) => Ok(Ast::Neg(Box::new(self.factor()?))),
            _ => Err(RawError::Parse {
                position,
                message: "expected a number, name or parenthesized expression".into(),
            }),
        }
    }
}

fn parse(
    src: &str,
    chart: &Arc<ChartDomain>,
    space: &Arc<MeasurandSpace>,
) -> Result<Ast, RawError> {
    let toks = tokenize(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        chart,
        space,
        end: src.len(),
    };
    let ast = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(RawError::Parse {
            position: p.here(),
            message: "trailing input".into(),
        });
    }
    Ok(ast)
}
