//! Action-definition language.
//!
//! ```text
//! action Place(o: active, h: hand) {
//!     static: C1(o), C3(o, place);
//!     after: Pick(o, h);
//!     phase: hold(C6(o, h), th_n) & !C9(o, h) & C11(o);
//! }
//! ```
//!
//! Grammar (comments run from `#` or `//` to end of line):
//!
//! ```text
//! library  := action*
//! action   := "action" IDENT "(" role ("," role)* ")" "{" clause* "}"
//! role     := IDENT ":" ("active" | "passive" | "hand")
//! clause   := "static" ":" atom ("," atom)* ";"
//!           | ("after" | "includes") ":" IDENT "(" IDENT ("," IDENT)* ")" ";"
//!           | "phase" ":" literal ("&" literal)* ";"
//! literal  := "!"? atom | "hold" "(" atom "," (INT | "th_n") ")"
//! atom     := CONSTRAINT "(" IDENT ("," IDENT)* ")"      CONSTRAINT := C1 .. C12
//! ```
//!
//! `static` clauses hold C1-C4 (C3/C4 take an affordance as their last
//! argument). A phase is a conjunction of per-frame constraints that must
//! hold together for a number of consecutive frames: the largest `hold`
//! count in the phase, or `th_n` when it has none. `after` names an action
//! that must have finished before this one starts; `includes` names an
//! action that becomes a child of this one. An action with no phases is a
//! composition of its included actions, matched in the listed order.
//!
//! An action has at most one role of each kind.

use crate::constraints::ConstraintId;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DslError {
    #[error("{line}:{col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("{line}:{col}: unknown constraint '{name}'")]
    UnknownConstraint { line: usize, col: usize, name: String },
    #[error("action '{action}': {message}")]
    Invalid { action: String, message: String },
    #[error("action '{action}' references unknown action '{target}'")]
    UnknownAction { action: String, target: String },
    #[error("duplicate action '{0}'")]
    DuplicateAction(String),
    #[error("cyclic action references: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RoleKind {
    Active,
    Passive,
    Hand,
}

impl RoleKind {
    pub fn keyword(self) -> &'static str {
        match self {
            RoleKind::Active => "active",
            RoleKind::Passive => "passive",
            RoleKind::Hand => "hand",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Role {
    pub name: String,
    pub kind: RoleKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub constraint: ConstraintId,
    pub roles: Vec<String>,
    pub affordance: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HoldCount {
    ThN,
    Frames(u32),
}

impl HoldCount {
    pub fn resolve(self, th_n: u32) -> u32 {
        match self {
            HoldCount::ThN => th_n,
            HoldCount::Frames(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Literal {
    pub negated: bool,
    pub atom: Atom,
    pub hold: Option<HoldCount>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Phase {
    pub literals: Vec<Literal>,
}

impl Phase {
    /// Consecutive frames the conjunction must hold for.
    pub fn duration(&self, th_n: u32) -> u32 {
        self.literals
            .iter()
            .filter_map(|l| l.hold.map(|h| h.resolve(th_n)))
            .max()
            .unwrap_or(th_n)
            .max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubKind {
    /// Must have ended before this action starts.
    After,
    /// Becomes a child instance.
    Includes,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubAction {
    pub kind: SubKind,
    pub action: String,
    pub roles: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionDefinition {
    pub name: String,
    pub roles: Vec<Role>,
    pub static_constraints: Vec<Atom>,
    pub sub_actions: Vec<SubAction>,
    pub phases: Vec<Phase>,
}

impl ActionDefinition {
    pub fn role(&self, name: &str) -> Option<&Role> {
        self.roles.iter().find(|r| r.name == name)
    }

    pub fn role_of_kind(&self, kind: RoleKind) -> Option<&Role> {
        self.roles.iter().find(|r| r.kind == kind)
    }

    pub fn is_composite(&self) -> bool {
        self.phases.is_empty()
    }

    /// Every affordance named by a static constraint.
    pub fn affordances(&self) -> impl Iterator<Item = &str> {
        self.static_constraints.iter().filter_map(|a| a.affordance.as_deref())
    }
}

// --- lexer ------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(u32),
    Punct(char),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, DslError> {
    let mut out = Vec::new();
    let mut chars = src.chars().peekable();
    let (mut line, mut col) = (1usize, 1usize);
    while let Some(&c) = chars.peek() {
        let (tl, tc) = (line, col);
        if c == '\n' {
            chars.next();
            line += 1;
            col = 1;
        } else if c.is_whitespace() {
            chars.next();
            col += 1;
        } else if c == '#' || (c == '/' && src_peek2(&chars) == Some('/')) {
            while let Some(&c) = chars.peek() {
                if c == '\n' {
                    break;
                }
                chars.next();
                col += 1;
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    s.push(c);
                    chars.next();
                    col += 1;
                } else {
                    break;
                }
            }
            out.push(Token { tok: Tok::Ident(s), line: tl, col: tc });
        } else if c.is_ascii_digit() {
            let mut s = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_digit() {
                    s.push(c);
                    chars.next();
                    col += 1;
                } else {
                    break;
                }
            }
            let n = s.parse().map_err(|_| DslError::Syntax {
                line: tl,
                col: tc,
                message: format!("integer '{s}' out of range"),
            })?;
            out.push(Token { tok: Tok::Int(n), line: tl, col: tc });
        } else if "(){},:;&!".contains(c) {
            chars.next();
            col += 1;
            out.push(Token { tok: Tok::Punct(c), line: tl, col: tc });
        } else {
            return Err(DslError::Syntax { line: tl, col: tc, message: format!("unexpected character '{c}'") });
        }
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

fn src_peek2(chars: &std::iter::Peekable<std::str::Chars<'_>>) -> Option<char> {
    let mut it = chars.clone();
    it.next();
    it.next()
}

// --- parser -----------------------------------------------------------------

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, t: &Token, message: impl Into<String>) -> Result<T, DslError> {
        Err(DslError::Syntax { line: t.line, col: t.col, message: message.into() })
    }

    fn expect_punct(&mut self, c: char) -> Result<(), DslError> {
        let t = self.next();
        match t.tok {
            Tok::Punct(p) if p == c => Ok(()),
            _ => self.err(&t, format!("expected '{c}', found {}", describe(&t.tok))),
        }
    }

    fn ident(&mut self) -> Result<(String, Token), DslError> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) => Ok((s.clone(), t.clone())),
            other => self.err(&t, format!("expected identifier, found {}", describe(other))),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), DslError> {
        let (s, t) = self.ident()?;
        if s == kw {
            Ok(())
        } else {
            self.err(&t, format!("expected '{kw}', found '{s}'"))
        }
    }

    fn at_punct(&self, c: char) -> bool {
        matches!(self.peek().tok, Tok::Punct(p) if p == c)
    }

    fn library(&mut self) -> Result<Vec<ActionDefinition>, DslError> {
        let mut defs = Vec::new();
        while self.peek().tok != Tok::Eof {
            defs.push(self.action()?);
        }
        Ok(defs)
    }

    fn action(&mut self) -> Result<ActionDefinition, DslError> {
        self.keyword("action")?;
        let (name, _) = self.ident()?;
        self.expect_punct('(')?;
        let mut roles = Vec::new();
        loop {
            let (rname, _) = self.ident()?;
            self.expect_punct(':')?;
            let (kind, kt) = self.ident()?;
            let kind = match kind.as_str() {
                "active" => RoleKind::Active,
                "passive" => RoleKind::Passive,
                "hand" => RoleKind::Hand,
                other => return self.err(&kt, format!("unknown role kind '{other}'")),
            };
            roles.push(Role { name: rname, kind });
            if self.at_punct(',') {
                self.next();
                continue;
            }
            break;
        }
        self.expect_punct(')')?;
        self.expect_punct('{')?;
        let mut def = ActionDefinition {
            name,
            roles,
            static_constraints: Vec::new(),
            sub_actions: Vec::new(),
            phases: Vec::new(),
        };
        while !self.at_punct('}') {
            let (clause, ct) = self.ident()?;
            self.expect_punct(':')?;
            match clause.as_str() {
                "static" => loop {
                    def.static_constraints.push(self.atom()?);
                    if self.at_punct(',') {
                        self.next();
                        continue;
                    }
                    break;
                },
                "after" | "includes" => {
                    let kind = if clause == "after" { SubKind::After } else { SubKind::Includes };
                    let (action, _) = self.ident()?;
                    let roles = self.ident_list()?;
                    def.sub_actions.push(SubAction { kind, action, roles });
                }
                "phase" => {
                    let mut literals = vec![self.literal()?];
                    while self.at_punct('&') {
                        self.next();
                        literals.push(self.literal()?);
                    }
                    def.phases.push(Phase { literals });
                }
                other => return self.err(&ct, format!("unknown clause '{other}'")),
            }
            self.expect_punct(';')?;
        }
        self.expect_punct('}')?;
        Ok(def)
    }

    fn ident_list(&mut self) -> Result<Vec<String>, DslError> {
        self.expect_punct('(')?;
        let mut out = vec![self.ident()?.0];
        while self.at_punct(',') {
            self.next();
            out.push(self.ident()?.0);
        }
        self.expect_punct(')')?;
        Ok(out)
    }

    fn atom(&mut self) -> Result<Atom, DslError> {
        let (name, t) = self.ident()?;
        let constraint: ConstraintId = name.parse().map_err(|_| DslError::UnknownConstraint {
            line: t.line,
            col: t.col,
            name: name.clone(),
        })?;
        let mut args = self.ident_list()?;
        let affordance = if constraint.operands().affordance {
            if args.len() < 2 {
                return self.err(&t, format!("{constraint} takes a role and an affordance"));
            }
            args.pop()
        } else {
            None
        };
        Ok(Atom { constraint, roles: args, affordance })
    }

    fn literal(&mut self) -> Result<Literal, DslError> {
        if self.at_punct('!') {
            self.next();
            let t = self.peek().clone();
            if t.tok == Tok::Ident("hold".into()) {
                return self.err(&t, "hold(...) cannot be negated");
            }
            return Ok(Literal { negated: true, atom: self.atom()?, hold: None });
        }
        if self.peek().tok == Tok::Ident("hold".into()) {
            self.next();
            self.expect_punct('(')?;
            let atom = self.atom()?;
            self.expect_punct(',')?;
            let t = self.next();
            let count = match &t.tok {
                Tok::Int(0) => return self.err(&t, "hold count must be >= 1"),
                Tok::Int(n) => HoldCount::Frames(*n),
                Tok::Ident(s) if s == "th_n" => HoldCount::ThN,
                other => return self.err(&t, format!("expected frame count or th_n, found {}", describe(other))),
            };
            self.expect_punct(')')?;
            return Ok(Literal { negated: false, atom, hold: Some(count) });
        }
        Ok(Literal { negated: false, atom: self.atom()?, hold: None })
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("'{s}'"),
        Tok::Int(n) => format!("'{n}'"),
        Tok::Punct(c) => format!("'{c}'"),
        Tok::Eof => "end of input".into(),
    }
}

fn expected_kinds(c: ConstraintId) -> &'static [RoleKind] {
    use ConstraintId::*;
    use RoleKind::*;
    match c {
        C1 | C3 | C10 | C11 => &[Active],
        C2 | C4 => &[Passive],
        C5 | C6 | C7 | C8 | C9 => &[Active, Hand],
        C12 => &[Active, Passive],
    }
}

fn check_definition(def: &ActionDefinition) -> Result<(), DslError> {
    let invalid = |message: String| DslError::Invalid { action: def.name.clone(), message };
    let mut names = BTreeSet::new();
    let mut kinds = BTreeSet::new();
    for r in &def.roles {
        if !names.insert(r.name.as_str()) {
            return Err(invalid(format!("duplicate role '{}'", r.name)));
        }
        if !kinds.insert(r.kind) {
            return Err(invalid(format!("more than one {} role", r.kind.keyword())));
        }
    }
    let check_atom = |a: &Atom| -> Result<(), DslError> {
        let want = expected_kinds(a.constraint);
        if a.roles.len() != want.len() {
            return Err(invalid(format!(
                "{} takes {} role argument(s), got {}",
                a.constraint,
                want.len(),
                a.roles.len()
            )));
        }
        for (name, kind) in a.roles.iter().zip(want) {
            match def.role(name) {
                None => return Err(invalid(format!("unknown role '{name}' in {}", a.constraint))),
                Some(r) if r.kind != *kind => {
                    return Err(invalid(format!(
                        "{} expects a {} role, '{name}' is {}",
                        a.constraint,
                        kind.keyword(),
                        r.kind.keyword()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    };
    for a in &def.static_constraints {
        if !a.constraint.is_static() {
            return Err(invalid(format!("{} is not a static constraint", a.constraint)));
        }
        check_atom(a)?;
    }
    for p in &def.phases {
        for l in &p.literals {
            if l.atom.constraint.is_static() {
                return Err(invalid(format!("{} belongs in a static clause", l.atom.constraint)));
            }
            if l.negated && !l.atom.constraint.is_per_frame() {
                return Err(invalid(format!("{} cannot be negated", l.atom.constraint)));
            }
            check_atom(&l.atom)?;
        }
    }
    for s in &def.sub_actions {
        for r in &s.roles {
            if def.role(r).is_none() {
                return Err(invalid(format!("unknown role '{r}' in {}(...)", s.action)));
            }
        }
    }
    if def.phases.is_empty() && !def.sub_actions.iter().any(|s| s.kind == SubKind::Includes) {
        return Err(invalid("needs at least one phase or included action".into()));
    }
    Ok(())
}

/// Checks cross-definition references and returns definition indices in
/// dependency order (referenced actions first).
pub fn validate_library(defs: &[ActionDefinition]) -> Result<Vec<usize>, DslError> {
    let mut index = BTreeMap::new();
    for (i, d) in defs.iter().enumerate() {
        if index.insert(d.name.as_str(), i).is_some() {
            return Err(DslError::DuplicateAction(d.name.clone()));
        }
    }
    for d in defs {
        check_definition(d)?;
        for s in &d.sub_actions {
            let Some(&j) = index.get(s.action.as_str()) else {
                return Err(DslError::UnknownAction { action: d.name.clone(), target: s.action.clone() });
            };
            let target = &defs[j];
            let invalid = |message: String| DslError::Invalid { action: d.name.clone(), message };
            if s.roles.len() != target.roles.len() {
                return Err(invalid(format!(
                    "{} takes {} roles, got {}",
                    target.name,
                    target.roles.len(),
                    s.roles.len()
                )));
            }
            for (mine, theirs) in s.roles.iter().zip(&target.roles) {
                let kind = d.role(mine).expect("checked").kind;
                if kind != theirs.kind {
                    return Err(invalid(format!(
                        "role '{mine}' is {} but {}.{} is {}",
                        kind.keyword(),
                        target.name,
                        theirs.name,
                        theirs.kind.keyword()
                    )));
                }
            }
        }
    }

    // Depth-first topological sort; a grey node on the stack means a cycle.
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Grey,
        Black,
    }
    fn visit(
        i: usize,
        defs: &[ActionDefinition],
        index: &BTreeMap<&str, usize>,
        marks: &mut [Mark],
        stack: &mut Vec<usize>,
        order: &mut Vec<usize>,
    ) -> Result<(), DslError> {
        match marks[i] {
            Mark::Black => return Ok(()),
            Mark::Grey => {
                let from = stack.iter().position(|&s| s == i).expect("grey nodes are on the stack");
                let mut cycle: Vec<String> = stack[from..].iter().map(|&s| defs[s].name.clone()).collect();
                cycle.push(defs[i].name.clone());
                return Err(DslError::Cycle(cycle));
            }
            Mark::White => {}
        }
        marks[i] = Mark::Grey;
        stack.push(i);
        for s in &defs[i].sub_actions {
            visit(index[s.action.as_str()], defs, index, marks, stack, order)?;
        }
        stack.pop();
        marks[i] = Mark::Black;
        order.push(i);
        Ok(())
    }
    let mut marks = vec![Mark::White; defs.len()];
    let mut order = Vec::with_capacity(defs.len());
    for i in 0..defs.len() {
        visit(i, defs, &index, &mut marks, &mut Vec::new(), &mut order)?;
    }
    Ok(order)
}

/// Parses and validates a library of action definitions.
pub fn parse_actions(source: &str) -> Result<Vec<ActionDefinition>, DslError> {
    let toks = lex(source)?;
    let defs = Parser { toks, pos: 0 }.library()?;
    validate_library(&defs)?;
    Ok(defs)
}

// --- printer ----------------------------------------------------------------

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut args = self.roles.clone();
        if let Some(a) = &self.affordance {
            args.push(a.clone());
        }
        write!(f, "{}({})", self.constraint, args.join(", "))
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.negated, self.hold) {
            (true, _) => write!(f, "!{}", self.atom),
            (false, Some(HoldCount::ThN)) => write!(f, "hold({}, th_n)", self.atom),
            (false, Some(HoldCount::Frames(n))) => write!(f, "hold({}, {n})", self.atom),
            (false, None) => write!(f, "{}", self.atom),
        }
    }
}

impl fmt::Display for ActionDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let roles: Vec<String> = self.roles.iter().map(|r| format!("{}: {}", r.name, r.kind.keyword())).collect();
        writeln!(f, "action {}({}) {{", self.name, roles.join(", "))?;
        if !self.static_constraints.is_empty() {
            let atoms: Vec<String> = self.static_constraints.iter().map(|a| a.to_string()).collect();
            writeln!(f, "    static: {};", atoms.join(", "))?;
        }
        for s in &self.sub_actions {
            let kw = match s.kind {
                SubKind::After => "after",
                SubKind::Includes => "includes",
            };
            writeln!(f, "    {kw}: {}({});", s.action, s.roles.join(", "))?;
        }
        for p in &self.phases {
            let lits: Vec<String> = p.literals.iter().map(|l| l.to_string()).collect();
            writeln!(f, "    phase: {};", lits.join(" & "))?;
        }
        write!(f, "}}")
    }
}

/// Canonical source text for a library; parses back to equal definitions.
pub fn dump_actions(defs: &[ActionDefinition]) -> String {
    let mut out = String::new();
    for (i, d) in defs.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        writeln!(out, "{d}").expect("writing to a String");
    }
    out
}
