//! LP text format.
//!
//! The writer emits every variable in the `Bounds` section in id order, so
//! reading a file back reproduces variable ids as well as rows. Indicators
//! use the conditional form `name: z = 1 -> a x <= r`.
//!
//! Reals are written as plain integers when integral and below 1e15 in
//! magnitude, otherwise in shortest round-trip scientific form (`2.5e-1`).

use std::collections::HashMap;
use std::fmt::Write;

use net2milp_core::milp::{LinearConstraint, MilpError, MilpModel, Sense, VarId, VarKind};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("model: {0}")]
    Model(#[from] MilpError),
}

pub fn format_real(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:e}")
    }
}

fn write_terms(out: &mut String, model: &MilpModel, terms: &[(VarId, f64)]) {
    for &(v, a) in terms {
        let sign = if a.is_sign_negative() { '-' } else { '+' };
        let _ = write!(out, " {sign} {} {}", format_real(a.abs()), model.var(v).name);
    }
}

fn write_row(out: &mut String, model: &MilpModel, c: &LinearConstraint) {
    write_terms(out, model, &c.terms);
    let _ = write!(out, " {} {}", c.sense.symbol(), format_real(c.rhs));
}

/// Deterministic LP text for `model`.
pub fn write_lp(model: &MilpModel) -> String {
    let mut out = String::from("\\ net2milp\nMinimize\n obj:");
    let costs: Vec<(VarId, f64)> = model.vars().iter().filter(|v| v.cost != 0.0).map(|v| (v.id, v.cost)).collect();
    if !costs.is_empty() {
        write_terms(&mut out, model, &costs);
    } else if let Some(v) = model.vars().first() {
        let _ = write!(out, " 0 {}", v.name);
    }
    out.push_str("\nSubject To\n");
    for c in model.constraints() {
        out.push(' ');
        if !c.name.is_empty() {
            let _ = write!(out, "{}:", c.name);
        }
        write_row(&mut out, model, c);
        out.push('\n');
    }
    for ind in model.indicators() {
        let _ = write!(
            out,
            " {}: {} = {} ->",
            ind.name,
            model.var(ind.guard).name,
            u8::from(ind.active_when)
        );
        write_row(&mut out, model, &ind.implied);
        out.push('\n');
    }
    out.push_str("Bounds\n");
    for v in model.vars() {
        if v.lb == f64::NEG_INFINITY && v.ub == f64::INFINITY {
            let _ = writeln!(out, " {} free", v.name);
        } else {
            let _ = writeln!(out, " {} <= {} <= {}", format_real(v.lb), v.name, format_real(v.ub));
        }
    }
    out.push_str("Binaries\n");
    for v in model.vars().iter().filter(|v| v.kind == VarKind::Binary) {
        let _ = writeln!(out, " {}", v.name);
    }
    out.push_str("End\n");
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Section {
    Objective,
    Constraints,
    Bounds,
    Binaries,
    End,
}

fn section_keyword(line: &str) -> Option<Section> {
    match line.to_ascii_lowercase().as_str() {
        "minimize" | "minimum" | "min" => Some(Section::Objective),
        "subject to" | "such that" | "st" | "s.t." => Some(Section::Constraints),
        "bounds" | "bound" => Some(Section::Bounds),
        "binaries" | "binary" | "bin" => Some(Section::Binaries),
        "end" => Some(Section::End),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Tok {
    text: String,
    line: usize,
}

/// Tokens are whitespace separated; a trailing `:` marks a label.
fn tokenize(text: &str, line: usize, out: &mut Vec<Tok>) {
    for raw in text.split_whitespace() {
        match raw.strip_suffix(':') {
            Some(label) if !label.is_empty() => {
                out.push(Tok { text: label.into(), line });
                out.push(Tok { text: ":".into(), line });
            }
            _ => out.push(Tok { text: raw.into(), line }),
        }
    }
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

fn syntax(line: usize, message: impl Into<String>) -> LpError {
    LpError::Syntax {
        line,
        message: message.into(),
    }
}

fn parse_number(s: &str) -> Option<f64> {
    match s.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "+infinity" => Some(f64::INFINITY),
        "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
        t if t.starts_with(|c: char| c.is_ascii_digit() || c == '.' || c == '-' || c == '+') => t.parse().ok(),
        _ => None,
    }
}

fn is_sense(s: &str) -> Option<Sense> {
    match s {
        "<=" | "=<" | "<" => Some(Sense::Le),
        ">=" | "=>" | ">" => Some(Sense::Ge),
        "=" => Some(Sense::Eq),
        _ => None,
    }
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, k: usize) -> Option<&str> {
        self.toks.get(self.pos + k).map(|t| t.text.as_str())
    }

    fn line(&self) -> usize {
        self.peek().or(self.toks.last()).map_or(0, |t| t.line)
    }

    fn next(&mut self) -> Result<Tok, LpError> {
        let t = self.toks.get(self.pos).cloned().ok_or_else(|| syntax(self.line(), "unexpected end of section"))?;
        self.pos += 1;
        Ok(t)
    }

    fn label(&mut self) -> Option<String> {
        if self.peek_at(1) == Some(":") {
            let name = self.toks[self.pos].text.clone();
            self.pos += 2;
            Some(name)
        } else {
            None
        }
    }

    /// Terms up to a sense operator or the end of the stream.
    fn terms(&mut self) -> Result<Vec<(String, f64)>, LpError> {
        let mut terms = Vec::new();
        while let Some(t) = self.peek() {
            if is_sense(&t.text).is_some() {
                break;
            }
            // a label followed by ':' starts the next statement
            if self.peek_at(1) == Some(":") {
                break;
            }
            let mut sign = 1.0;
            let mut coef = 1.0;
            let mut tok = self.next()?;
            if tok.text == "+" || tok.text == "-" {
                if tok.text == "-" {
                    sign = -1.0;
                }
                tok = self.next()?;
            }
            if let Some(v) = parse_number(&tok.text) {
                coef = v;
                tok = self.next()?;
            } else if let Some(name) = tok.text.strip_prefix('-') {
                sign = -sign;
                tok.text = name.into();
            } else if let Some(name) = tok.text.strip_prefix('+') {
                tok.text = name.into();
            }
            if parse_number(&tok.text).is_some() || is_sense(&tok.text).is_some() || tok.text.is_empty() {
                return Err(syntax(tok.line, format!("expected a variable name, found {:?}", tok.text)));
            }
            terms.push((tok.text, sign * coef));
        }
        Ok(terms)
    }

    fn number(&mut self) -> Result<f64, LpError> {
        let mut t = self.next()?;
        let mut sign = 1.0;
        if t.text == "-" || t.text == "+" {
            if t.text == "-" {
                sign = -1.0;
            }
            t = self.next()?;
        }
        parse_number(&t.text).map(|v| sign * v).ok_or_else(|| syntax(t.line, format!("expected a number, found {:?}", t.text)))
    }
}

struct RawRow {
    name: String,
    terms: Vec<(String, f64)>,
    sense: Sense,
    rhs: f64,
    line: usize,
}

struct RawIndicator {
    name: String,
    guard: String,
    active: bool,
    row: RawRow,
}

#[derive(Default)]
struct Collected {
    objective: Vec<(String, f64)>,
    rows: Vec<RawRow>,
    indicators: Vec<RawIndicator>,
    bounds: Vec<(String, Option<f64>, Option<f64>)>,
    binaries: Vec<String>,
}

fn parse_row(p: &mut Parser, name: String) -> Result<RawRow, LpError> {
    let line = p.line();
    let terms = p.terms()?;
    let op = p.next()?;
    let sense = is_sense(&op.text).ok_or_else(|| syntax(op.line, format!("expected a sense, found {:?}", op.text)))?;
    let rhs = p.number()?;
    Ok(RawRow {
        name,
        terms,
        sense,
        rhs,
        line,
    })
}

fn parse_constraints(p: &mut Parser, c: &mut Collected) -> Result<(), LpError> {
    while p.peek().is_some() {
        let name = p.label().unwrap_or_default();
        let is_indicator = p.peek_at(1) == Some("=") && p.peek_at(3) == Some("->");
        if is_indicator {
            let guard = p.next()?.text;
            p.next()?;
            let v = p.next()?;
            let active = match v.text.as_str() {
                "1" => true,
                "0" => false,
                other => return Err(syntax(v.line, format!("indicator value must be 0 or 1, found {other:?}"))),
            };
            p.next()?;
            let row = parse_row(p, String::new())?;
            c.indicators.push(RawIndicator {
                name,
                guard,
                active,
                row,
            });
        } else {
            c.rows.push(parse_row(p, name)?);
        }
    }
    Ok(())
}

fn parse_bound_line(toks: &[Tok], c: &mut Collected) -> Result<(), LpError> {
    let line = toks[0].line;
    let text: Vec<&str> = toks.iter().map(|t| t.text.as_str()).collect();
    let bad = || syntax(line, format!("unrecognised bound {:?}", text.join(" ")));
    let entry = match text.as_slice() {
        [name, free] if free.eq_ignore_ascii_case("free") => ((*name).to_string(), Some(f64::NEG_INFINITY), Some(f64::INFINITY)),
        [lo, "<=", name, "<=", hi] => {
            let lo = parse_number(lo).ok_or_else(bad)?;
            let hi = parse_number(hi).ok_or_else(bad)?;
            ((*name).to_string(), Some(lo), Some(hi))
        }
        [name, op, v] | [v, op, name] if parse_number(name).is_none() => {
            let value = parse_number(v).ok_or_else(bad)?;
            let name_first = text[0] == *name;
            let sense = is_sense(op).ok_or_else(bad)?;
            let (lo, hi) = match (sense, name_first) {
                (Sense::Eq, _) => (Some(value), Some(value)),
                (Sense::Le, true) | (Sense::Ge, false) => (None, Some(value)),
                (Sense::Ge, true) | (Sense::Le, false) => (Some(value), None),
            };
            ((*name).to_string(), lo, hi)
        }
        _ => return Err(bad()),
    };
    c.bounds.push(entry);
    Ok(())
}

/// Parses LP text. Variables are numbered in `Bounds` order, then in order
/// of first appearance elsewhere; undeclared continuous variables get the
/// LP default `[0, +inf)`.
pub fn read_lp(text: &str) -> Result<MilpModel, LpError> {
    let mut section = None;
    let mut by_section: Vec<(Section, Vec<Tok>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('\\').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(s) = section_keyword(line) {
            section = Some(s);
            by_section.push((s, Vec::new()));
            continue;
        }
        let Some(s) = section else {
            return Err(syntax(i + 1, "content before the objective section"));
        };
        let mut toks = Vec::new();
        tokenize(line, i + 1, &mut toks);
        match s {
            // bounds and binaries are line oriented
            Section::Bounds | Section::Binaries => by_section.push((s, toks)),
            Section::End => return Err(syntax(i + 1, "content after End")),
            _ => by_section.last_mut().expect("section opened").1.extend(toks),
        }
    }
    let mut c = Collected::default();
    for (s, toks) in by_section {
        if toks.is_empty() {
            continue;
        }
        match s {
            Section::Objective => {
                let mut p = Parser { toks, pos: 0 };
                p.label();
                c.objective = p.terms()?;
                if let Some(t) = p.peek() {
                    return Err(syntax(t.line, format!("unexpected {:?} in objective", t.text)));
                }
            }
            Section::Constraints => parse_constraints(&mut Parser { toks, pos: 0 }, &mut c)?,
            Section::Bounds => parse_bound_line(&toks, &mut c)?,
            Section::Binaries => c.binaries.extend(toks.into_iter().map(|t| t.text)),
            Section::End => {}
        }
    }
    assemble(c)
}

fn assemble(c: Collected) -> Result<MilpModel, LpError> {
    let mut order: Vec<String> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut note = |name: &str| {
        if !seen.contains_key(name) {
            seen.insert(name.to_string(), order.len());
            order.push(name.to_string());
        }
    };
    for (name, _, _) in &c.bounds {
        note(name);
    }
    for (name, _) in &c.objective {
        note(name);
    }
    for r in c.rows.iter().chain(c.indicators.iter().map(|i| &i.row)) {
        for (name, _) in &r.terms {
            note(name);
        }
    }
    for i in &c.indicators {
        note(&i.guard);
    }
    for name in &c.binaries {
        note(name);
    }
    let mut lb = vec![0.0; order.len()];
    let mut ub = vec![f64::INFINITY; order.len()];
    let mut binary = vec![false; order.len()];
    let mut cost = vec![0.0; order.len()];
    for (name, lo, hi) in &c.bounds {
        let j = seen[name];
        if let Some(lo) = lo {
            lb[j] = *lo;
        }
        if let Some(hi) = hi {
            ub[j] = *hi;
        }
    }
    for name in &c.binaries {
        binary[seen[name]] = true;
    }
    for (name, a) in &c.objective {
        cost[seen[name]] += a;
    }
    let mut m = MilpModel::new();
    for (j, name) in order.iter().enumerate() {
        if binary[j] {
            m.add_var(name.clone(), VarKind::Binary, lb[j], ub[j].min(1.0), cost[j])?;
        } else {
            m.add_var(name.clone(), VarKind::Continuous, lb[j], ub[j], cost[j])?;
        }
    }
    let row = |r: &RawRow| -> Result<LinearConstraint, LpError> {
        let mut terms: Vec<(VarId, f64)> = Vec::with_capacity(r.terms.len());
        for (name, a) in &r.terms {
            let v = VarId(seen[name]);
            if terms.iter().any(|(u, _)| *u == v) {
                return Err(syntax(r.line, format!("{name} appears twice in one row")));
            }
            terms.push((v, *a));
        }
        Ok(LinearConstraint::new(r.name.clone(), terms, r.sense, r.rhs))
    };
    for r in &c.rows {
        m.add_constraint(row(r)?)?;
    }
    for i in &c.indicators {
        if i.row.sense != Sense::Le {
            return Err(syntax(i.row.line, "indicator rows must use <="));
        }
        m.add_indicator(i.name.clone(), VarId(seen[&i.guard]), i.active, row(&i.row)?)?;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals() {
        assert_eq!(format_real(3.0), "3");
        assert_eq!(format_real(-0.25), "-2.5e-1");
        assert_eq!(format_real(0.1), "1e-1");
        assert_eq!(format_real(1e20), "1e20");
        for v in [0.1, 1.0 / 3.0, -7.123456789012345e-9, 2e300] {
            assert_eq!(parse_number(&format_real(v)), Some(v));
        }
    }

    #[test]
    fn reads_hand_written_forms() {
        let text = "\\ comment\nMinimize\n obj: 2 x - y\n + 3 z\nSubject To\n c1: x + y >= 1\n -x + 2.5 y <= 4\n ind: z = 0 -> x <= 0\nBounds\n y <= 10\n x free\n 1 >= w\nBinaries\n z\nEnd\n";
        let m = read_lp(text).unwrap();
        let names: Vec<&str> = m.vars().iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names, ["y", "x", "w", "z"]);
        assert_eq!((m.vars()[0].lb, m.vars()[0].ub), (0.0, 10.0));
        assert_eq!(m.vars()[1].lb, f64::NEG_INFINITY);
        assert_eq!(m.vars()[2].ub, 1.0);
        assert_eq!(m.vars()[3].kind, VarKind::Binary);
        assert_eq!(m.vars()[3].cost, 3.0);
        assert_eq!(m.constraints()[1].terms, vec![(VarId(1), -1.0), (VarId(0), 2.5)]);
        assert!(!m.indicators()[0].active_when);
        assert!(read_lp("Minimize\n obj: x\nSubject To\n c: x + x <= 1\nEnd\n").is_err());
        assert!(read_lp("Minimize\n obj: x\nSubject To\n c: x <=\nEnd\n").is_err());
    }
}
