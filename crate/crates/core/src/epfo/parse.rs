//! S-expression query syntax.
//!
//! ```text
//! query   := "(" "query" ?target formula ")"
//! formula := "(" "and" formula+ ")"
//!          | "(" "or" formula+ ")"
//!          | "(" "exists" ?var formula ")"
//!          | "(" relation term term ")"
//! term    := $anchor | ?var
//! ```
//!
//! `forall` and `not` are recognized only to be rejected. Anchors are bound
//! to entity names separately, e.g. `gl=George Lucas;x=Other`.

use super::{Atom, EpfoQuery, Formula, Term};
use crate::error::QueryError;
use crate::kg::KnowledgeGraph;

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Symbol(String, usize),
    List(Vec<Sexp>, usize),
}

fn syntax(offset: usize, message: impl Into<String>) -> QueryError {
    QueryError::Syntax { offset, message: message.into() }
}

fn read_sexp(text: &str) -> Result<Sexp, QueryError> {
    let bytes: Vec<(usize, char)> = text.char_indices().collect();
    let mut pos = 0;
    let sexp = read_at(&bytes, &mut pos, text.len())?;
    skip_ws(&bytes, &mut pos);
    if pos < bytes.len() {
        return Err(syntax(bytes[pos].0, "trailing input after query"));
    }
    Ok(sexp)
}

fn skip_ws(chars: &[(usize, char)], pos: &mut usize) {
    while *pos < chars.len() && chars[*pos].1.is_whitespace() {
        *pos += 1;
    }
}

fn read_at(chars: &[(usize, char)], pos: &mut usize, end: usize) -> Result<Sexp, QueryError> {
    skip_ws(chars, pos);
    let Some(&(offset, ch)) = chars.get(*pos) else {
        return Err(syntax(end, "unexpected end of input"));
    };
    match ch {
        '(' => {
            *pos += 1;
            let mut items = Vec::new();
            loop {
                skip_ws(chars, pos);
                match chars.get(*pos) {
                    None => return Err(syntax(end, "unclosed '('")),
                    Some(&(_, ')')) => {
                        *pos += 1;
                        return Ok(Sexp::List(items, offset));
                    }
                    Some(_) => items.push(read_at(chars, pos, end)?),
                }
            }
        }
        ')' => Err(syntax(offset, "unexpected ')'")),
        _ => {
            let mut sym = String::new();
            while let Some(&(_, c)) = chars.get(*pos) {
                if c.is_whitespace() || c == '(' || c == ')' {
                    break;
                }
                sym.push(c);
                *pos += 1;
            }
            Ok(Sexp::Symbol(sym, offset))
        }
    }
}

struct Builder<'a> {
    graph: &'a KnowledgeGraph,
    var_names: Vec<String>,
    anchor_names: Vec<String>,
}

impl Builder<'_> {
    fn var(&mut self, name: &str) -> usize {
        match self.var_names.iter().position(|v| v == name) {
            Some(i) => i,
            None => {
                self.var_names.push(name.to_owned());
                self.var_names.len() - 1
            }
        }
    }

    fn term(&mut self, sexp: &Sexp) -> Result<Term, QueryError> {
        match sexp {
            Sexp::Symbol(s, off) => {
                if let Some(name) = s.strip_prefix('?').filter(|n| !n.is_empty()) {
                    Ok(Term::Var(self.var(name)))
                } else if let Some(name) = s.strip_prefix('$').filter(|n| !n.is_empty()) {
                    let i = match self.anchor_names.iter().position(|a| a == name) {
                        Some(i) => i,
                        None => {
                            self.anchor_names.push(name.to_owned());
                            self.anchor_names.len() - 1
                        }
                    };
                    Ok(Term::Anchor(i))
                } else {
                    Err(syntax(*off, format!("expected ?variable or $anchor, found '{s}'")))
                }
            }
            Sexp::List(_, off) => Err(syntax(*off, "expected a term, found a list")),
        }
    }

    fn formula(&mut self, sexp: &Sexp) -> Result<Formula, QueryError> {
        let Sexp::List(items, off) = sexp else {
            let Sexp::Symbol(s, off) = sexp else { unreachable!() };
            return Err(syntax(*off, format!("expected a formula, found '{s}'")));
        };
        let Some(Sexp::Symbol(head, hoff)) = items.first() else {
            return Err(syntax(*off, "formula must start with an operator or relation name"));
        };
        let rest = &items[1..];
        match head.as_str() {
            "forall" => Err(QueryError::Universal),
            "not" => Err(QueryError::Negation),
            "and" | "or" => {
                if rest.is_empty() {
                    return Err(syntax(*hoff, format!("'{head}' needs at least one operand")));
                }
                let parts = rest.iter().map(|s| self.formula(s)).collect::<Result<Vec<_>, _>>()?;
                Ok(if head == "and" { Formula::And(parts) } else { Formula::Or(parts) })
            }
            "exists" => {
                let [var, body] = rest else {
                    return Err(syntax(*hoff, "'exists' takes a variable and a formula"));
                };
                match self.term(var)? {
                    Term::Var(_) => self.formula(body),
                    Term::Anchor(_) => Err(syntax(*hoff, "'exists' binds a ?variable")),
                }
            }
            rel => {
                let [s, o] = rest else {
                    return Err(syntax(*hoff, format!("atom '{rel}' takes exactly two terms")));
                };
                let relation = self.graph.relation_id(rel)?;
                if relation == crate::kg::SELF_RELATION {
                    return Err(QueryError::Invalid("atoms cannot use the self relation".into()));
                }
                Ok(Formula::Atom(Atom { relation, subject: self.term(s)?, object: self.term(o)? }))
            }
        }
    }
}

/// Parses `bindings` of the form `name=Entity;name2=Entity2`.
pub fn parse_bindings(text: &str) -> Result<Vec<(String, String)>, QueryError> {
    let mut out = Vec::new();
    for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let Some((name, entity)) = part.split_once('=') else {
            return Err(QueryError::Invalid(format!("binding '{part}' is not name=entity")));
        };
        out.push((name.trim().trim_start_matches('$').to_owned(), entity.trim().to_owned()));
    }
    Ok(out)
}

/// Parses a query against `g`, resolving anchors through `bindings`.
pub fn parse_query(g: &KnowledgeGraph, text: &str, bindings: &[(String, String)]) -> Result<EpfoQuery, QueryError> {
    let sexp = read_sexp(text)?;
    let Sexp::List(items, off) = &sexp else {
        return Err(syntax(0, "query must be a list"));
    };
    let (Some(Sexp::Symbol(kw, _)), Some(target), Some(body), 3) = (items.first(), items.get(1), items.get(2), items.len()) else {
        return Err(syntax(*off, "expected (query ?target formula)"));
    };
    if kw != "query" {
        return Err(syntax(*off, format!("expected 'query', found '{kw}'")));
    }
    let mut b = Builder { graph: g, var_names: Vec::new(), anchor_names: Vec::new() };
    let Term::Var(target) = b.term(target)? else {
        return Err(syntax(*off, "the target must be a ?variable"));
    };
    let body = b.formula(body)?;
    let mut anchors = Vec::with_capacity(b.anchor_names.len());
    for name in &b.anchor_names {
        let Some((_, entity)) = bindings.iter().find(|(n, _)| n == name) else {
            return Err(QueryError::UnboundAnchor(name.clone()));
        };
        anchors.push(g.entity_id(entity)?);
    }
    Ok(EpfoQuery { target, var_names: b.var_names, anchor_names: b.anchor_names, anchors, body })
}

/// Parses one query-file line: `query<TAB>bindings`.
pub fn parse_query_line(g: &KnowledgeGraph, line: &str) -> Result<EpfoQuery, QueryError> {
    let (text, bindings) = line.split_once('\t').unwrap_or((line, ""));
    parse_query(g, text, &parse_bindings(bindings)?)
}
