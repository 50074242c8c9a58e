//! Evaluator for the probabilistic language.
//!
//! Source forms are first compiled into [`Expr`] trees (symbols interned,
//! special forms resolved), then evaluated against per-world state. One
//! [`Evaluator`] is reused across many worlds: [`Evaluator::reset`] starts a
//! fresh [`WorldTrace`] and clears every global binding back to the builtin
//! catalog.

use alloc::boxed::Box;
use alloc::format;
use alloc::rc::Rc;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cell::RefCell;

use hashbrown::HashMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::builtins::{self, Arity, Builtin};
use crate::sexpr::{SExpr, SExprKind, Span};
use crate::value::{Closure, Datum, Interner, MemoFn, Symbol, Value};

/// Default cap on nested procedure applications within one world.
pub const DEFAULT_MAX_DEPTH: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound symbol `{name}` at {span:?}")]
    Unbound { name: String, span: Span },
    #[error("`{name}` expects {expected} argument(s), got {got} at {span:?}")]
    Arity { name: String, expected: String, got: usize, span: Span },
    #[error("cannot apply non-procedure {value} at {span:?}")]
    NotAProcedure { value: String, span: Span },
    #[error("`{op}`: {message} at {span:?}")]
    Type { op: String, message: String, span: Span },
    #[error("`{op}`: {message} at {span:?}")]
    Domain { op: String, message: String, span: Span },
    #[error("malformed `{form}`: {message} at {span:?}")]
    Syntax { form: String, message: String, span: Span },
    #[error("recursion depth limit {limit} exceeded at {span:?}")]
    DepthExceeded { limit: usize, span: Span },
}

impl EvalError {
    pub fn span(&self) -> Span {
        match self {
            EvalError::Unbound { span, .. }
            | EvalError::Arity { span, .. }
            | EvalError::NotAProcedure { span, .. }
            | EvalError::Type { span, .. }
            | EvalError::Domain { span, .. }
            | EvalError::Syntax { span, .. }
            | EvalError::DepthExceeded { span, .. } => *span,
        }
    }

    /// The unbound symbol's name, if this is an unbound-symbol error.
    pub fn unbound_name(&self) -> Option<&str> {
        match self {
            EvalError::Unbound { name, .. } => Some(name),
            _ => None,
        }
    }

    pub(crate) fn type_error(op: &str, message: impl Into<String>, span: Span) -> Self {
        EvalError::Type { op: op.to_string(), message: message.into(), span }
    }

    pub(crate) fn domain(op: &str, message: impl Into<String>, span: Span) -> Self {
        EvalError::Domain { op: op.to_string(), message: message.into(), span }
    }
}

pub type EvalResult<T> = Result<T, EvalError>;

/// A lexical frame. Bindings are searched newest-first so that internal
/// `define`s can shadow parameters.
pub struct Frame {
    vars: RefCell<Vec<(Symbol, Value)>>,
    parent: Env,
}

/// `None` is the global environment.
pub type Env = Option<Rc<Frame>>;

impl Frame {
    fn new(vars: Vec<(Symbol, Value)>, parent: Env) -> Rc<Frame> {
        Rc::new(Frame { vars: RefCell::new(vars), parent })
    }
}

pub struct Lambda {
    pub params: Vec<Symbol>,
    pub rest: Option<Symbol>,
    pub body: Vec<Expr>,
    pub name: Option<Symbol>,
    pub span: Span,
}

pub struct CaseClause {
    data: Vec<Value>,
    body: Vec<Expr>,
}

/// Compiled expression.
pub enum Expr {
    Const(Value),
    Var(Symbol, Span),
    If(Box<Expr>, Box<Expr>, Option<Box<Expr>>),
    Lambda(Rc<Lambda>),
    Define(Symbol, Box<Expr>),
    Let(Vec<(Symbol, Expr)>, Vec<Expr>),
    LetStar(Vec<(Symbol, Expr)>, Vec<Expr>),
    Cond(Vec<(Expr, Vec<Expr>)>, Option<Vec<Expr>>),
    Case(Box<Expr>, Vec<CaseClause>, Option<Vec<Expr>>),
    And(Vec<Expr>),
    Or(Vec<Expr>),
    Begin(Vec<Expr>),
    App(Box<Expr>, Vec<Expr>, Span),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalConfig {
    pub max_depth: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { max_depth: DEFAULT_MAX_DEPTH }
    }
}

/// Randomness and memoization state of one sampled world.
pub struct WorldTrace {
    pub seed: u64,
    pub rng: ChaCha8Rng,
    pub memo: HashMap<(u64, Vec<Value>), Value>,
    pub gensyms: HashMap<Rc<str>, u64>,
    next_memo_id: u64,
}

impl WorldTrace {
    pub fn new(seed: u64) -> Self {
        WorldTrace {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            memo: HashMap::new(),
            gensyms: HashMap::new(),
            next_memo_id: 0,
        }
    }

    pub(crate) fn fresh_memo_id(&mut self) -> u64 {
        let id = self.next_memo_id;
        self.next_memo_id += 1;
        id
    }
}

/// Names of special forms, which are never looked up as variables.
pub const SPECIAL_FORMS: &[&str] = &["quote", "lambda", "define", "let", "let*", "if", "cond", "case", "and", "or", "begin"];

pub struct Evaluator {
    pub interner: Interner,
    globals: Vec<Option<Value>>,
    builtin_count: usize,
    pub trace: WorldTrace,
    config: EvalConfig,
    depth: usize,
    self_referential: Vec<Rc<Frame>>,
    kw: Keywords,
}

#[derive(Clone, Copy)]
struct Keywords {
    quote: Symbol,
    lambda: Symbol,
    define: Symbol,
    let_: Symbol,
    let_star: Symbol,
    if_: Symbol,
    cond: Symbol,
    case: Symbol,
    and: Symbol,
    or: Symbol,
    begin: Symbol,
    dot: Symbol,
}

impl Default for Evaluator {
    fn default() -> Self {
        Evaluator::new(EvalConfig::default())
    }
}

impl Evaluator {
    pub fn new(config: EvalConfig) -> Self {
        let mut interner = Interner::default();
        let catalog = builtins::catalog();
        let mut globals = Vec::with_capacity(catalog.len() + 64);
        for builtin in catalog {
            let sym = interner.intern(builtin.name);
            if globals.len() <= sym.index() {
                globals.resize(sym.index() + 1, None);
            }
            globals[sym.index()] = Some(Value::Builtin(builtin));
        }
        let builtin_count = globals.len();
        let kw = Keywords {
            quote: interner.intern("quote"),
            lambda: interner.intern("lambda"),
            define: interner.intern("define"),
            let_: interner.intern("let"),
            let_star: interner.intern("let*"),
            if_: interner.intern("if"),
            cond: interner.intern("cond"),
            case: interner.intern("case"),
            and: interner.intern("and"),
            or: interner.intern("or"),
            begin: interner.intern("begin"),
            dot: interner.intern("."),
        };
        Evaluator {
            interner,
            globals,
            builtin_count,
            trace: WorldTrace::new(0),
            config,
            depth: 0,
            self_referential: Vec::new(),
            kw,
        }
    }

    pub fn config(&self) -> EvalConfig {
        self.config
    }

    /// Starts a fresh world: new randomness, empty memo table, and only the
    /// builtin catalog bound globally.
    pub fn reset(&mut self, seed: u64) {
        for frame in self.self_referential.drain(..) {
            frame.vars.borrow_mut().clear();
        }
        self.globals.truncate(self.builtin_count);
        let catalog = builtins::catalog();
        for slot in self.globals.iter_mut() {
            if let Some(Value::Builtin(_)) = slot {
                continue;
            }
            *slot = None;
        }
        for builtin in catalog {
            let sym = self.interner.intern(builtin.name);
            self.globals[sym.index()] = Some(Value::Builtin(builtin));
        }
        self.trace = WorldTrace::new(seed);
        self.depth = 0;
    }

    pub fn intern(&mut self, name: &str) -> Symbol {
        self.interner.intern(name)
    }

    pub fn global(&self, sym: Symbol) -> Option<&Value> {
        self.globals.get(sym.index()).and_then(Option::as_ref)
    }

    pub fn global_by_name(&self, name: &str) -> Option<&Value> {
        self.interner.lookup(name).and_then(|s| self.global(s))
    }

    pub fn set_global(&mut self, sym: Symbol, value: Value) {
        if self.globals.len() <= sym.index() {
            self.globals.resize(sym.index() + 1, None);
        }
        self.globals[sym.index()] = Some(value);
    }

    pub fn to_datum(&self, value: &Value) -> Datum {
        value.to_datum(&self.interner)
    }

    // ---------------------------------------------------------------
    // Compilation
    // ---------------------------------------------------------------

    pub fn compile(&mut self, expr: &SExpr) -> EvalResult<Expr> {
        match &expr.kind {
            SExprKind::Number(n) => Ok(Expr::Const(Value::Number(*n))),
            SExprKind::Bool(b) => Ok(Expr::Const(Value::Bool(*b))),
            SExprKind::Str(s) => Ok(Expr::Const(Value::Str(Rc::from(s.as_str())))),
            SExprKind::Symbol(name) => Ok(Expr::Var(self.interner.intern(name), expr.span)),
            SExprKind::List(items) => self.compile_list(expr, items),
        }
    }

    fn compile_body(&mut self, forms: &[SExpr]) -> EvalResult<Vec<Expr>> {
        forms.iter().map(|f| self.compile(f)).collect()
    }

    fn syntax(form: &str, message: &str, span: Span) -> EvalError {
        EvalError::Syntax { form: form.to_string(), message: message.to_string(), span }
    }

    fn compile_list(&mut self, expr: &SExpr, items: &[SExpr]) -> EvalResult<Expr> {
        let span = expr.span;
        let Some(first) = items.first() else {
            return Ok(Expr::Const(Value::Nil));
        };
        if let Some(head) = first.as_symbol() {
            let head = self.interner.intern(head);
            let kw = self.kw;
            if head == kw.quote {
                if items.len() != 2 {
                    return Err(Self::syntax("quote", "expects exactly one datum", span));
                }
                return Ok(Expr::Const(self.quote(&items[1])));
            } else if head == kw.lambda {
                if items.len() < 3 {
                    return Err(Self::syntax("lambda", "expects parameters and a body", span));
                }
                let lambda = self.compile_lambda(&items[1], &items[2..], None, span)?;
                return Ok(Expr::Lambda(Rc::new(lambda)));
            } else if head == kw.define {
                return self.compile_define(items, span);
            } else if head == kw.let_ || head == kw.let_star {
                let star = head == kw.let_star;
                let form = if star { "let*" } else { "let" };
                if items.len() < 3 {
                    return Err(Self::syntax(form, "expects bindings and a body", span));
                }
                let bindings = items[1].as_list().ok_or_else(|| Self::syntax(form, "bindings must be a list", items[1].span))?;
                let mut compiled = Vec::with_capacity(bindings.len());
                for binding in bindings {
                    let pair = binding.as_list().filter(|b| b.len() == 2 && b[0].as_symbol().is_some());
                    let pair = pair.ok_or_else(|| Self::syntax(form, "each binding must be (name expr)", binding.span))?;
                    let name = self.interner.intern(pair[0].as_symbol().unwrap_or_default());
                    compiled.push((name, self.compile(&pair[1])?));
                }
                let body = self.compile_body(&items[2..])?;
                return Ok(if star { Expr::LetStar(compiled, body) } else { Expr::Let(compiled, body) });
            } else if head == kw.if_ {
                if items.len() != 3 && items.len() != 4 {
                    return Err(Self::syntax("if", "expects a test, a consequent and an optional alternative", span));
                }
                let test = self.compile(&items[1])?;
                let then = self.compile(&items[2])?;
                let other = match items.get(3) {
                    Some(e) => Some(Box::new(self.compile(e)?)),
                    None => None,
                };
                return Ok(Expr::If(Box::new(test), Box::new(then), other));
            } else if head == kw.cond {
                let mut clauses = Vec::new();
                let mut fallback = None;
                for clause in &items[1..] {
                    let parts = clause.as_list().filter(|p| !p.is_empty());
                    let parts = parts.ok_or_else(|| Self::syntax("cond", "each clause must be (test body...)", clause.span))?;
                    if parts[0].as_symbol() == Some("else") {
                        fallback = Some(self.compile_body(&parts[1..])?);
                    } else {
                        let test = self.compile(&parts[0])?;
                        clauses.push((test, self.compile_body(&parts[1..])?));
                    }
                }
                return Ok(Expr::Cond(clauses, fallback));
            } else if head == kw.case {
                if items.len() < 2 {
                    return Err(Self::syntax("case", "expects a key expression", span));
                }
                let key = self.compile(&items[1])?;
                let mut clauses = Vec::new();
                let mut fallback = None;
                for clause in &items[2..] {
                    let parts = clause.as_list().filter(|p| !p.is_empty());
                    let parts = parts.ok_or_else(|| Self::syntax("case", "each clause must be ((datum...) body...)", clause.span))?;
                    let body = self.compile_body(&parts[1..])?;
                    if parts[0].as_symbol() == Some("else") {
                        fallback = Some(body);
                        continue;
                    }
                    let data = parts[0].as_list().ok_or_else(|| Self::syntax("case", "clause data must be a list", parts[0].span))?;
                    // A datum written as 'x matches the symbol x.
                    let data = data
                        .iter()
                        .map(|d| match d.as_list() {
                            Some([q, inner]) if q.as_symbol() == Some("quote") => self.quote(inner),
                            _ => self.quote(d),
                        })
                        .collect();
                    clauses.push(CaseClause { data, body });
                }
                return Ok(Expr::Case(Box::new(key), clauses, fallback));
            } else if head == kw.and || head == kw.or {
                let parts = self.compile_body(&items[1..])?;
                return Ok(if head == kw.and { Expr::And(parts) } else { Expr::Or(parts) });
            } else if head == kw.begin {
                return Ok(Expr::Begin(self.compile_body(&items[1..])?));
            }
        }
        let func = self.compile(first)?;
        let args = self.compile_body(&items[1..])?;
        Ok(Expr::App(Box::new(func), args, span))
    }

    fn compile_define(&mut self, items: &[SExpr], span: Span) -> EvalResult<Expr> {
        if items.len() < 3 {
            return Err(Self::syntax("define", "expects a name and a value", span));
        }
        match &items[1].kind {
            SExprKind::Symbol(name) => {
                if items.len() != 3 {
                    return Err(Self::syntax("define", "expects exactly one value expression", span));
                }
                let sym = self.interner.intern(name);
                let mut value = self.compile(&items[2])?;
                if let Expr::Lambda(l) = &mut value {
                    if let Some(l) = Rc::get_mut(l) {
                        l.name = Some(sym);
                    }
                }
                Ok(Expr::Define(sym, Box::new(value)))
            }
            SExprKind::List(signature) => {
                let name = signature.first().and_then(SExpr::as_symbol);
                let name = name.ok_or_else(|| Self::syntax("define", "procedure name must be a symbol", items[1].span))?;
                let sym = self.interner.intern(name);
                let params = SExpr::new(SExprKind::List(signature[1..].to_vec()), items[1].span);
                let lambda = self.compile_lambda(&params, &items[2..], Some(sym), span)?;
                Ok(Expr::Define(sym, Box::new(Expr::Lambda(Rc::new(lambda)))))
            }
            _ => Err(Self::syntax("define", "name must be a symbol or (name params...)", items[1].span)),
        }
    }

    fn compile_lambda(&mut self, params: &SExpr, body: &[SExpr], name: Option<Symbol>, span: Span) -> EvalResult<Lambda> {
        let mut fixed = Vec::new();
        let mut rest = None;
        match &params.kind {
            SExprKind::Symbol(s) => rest = Some(self.interner.intern(s)),
            SExprKind::List(list) => {
                let mut iter = list.iter();
                while let Some(p) = iter.next() {
                    let p_name = p.as_symbol().ok_or_else(|| Self::syntax("lambda", "parameters must be symbols", p.span))?;
                    let sym = self.interner.intern(p_name);
                    if sym == self.kw.dot {
                        let r = iter.next().and_then(SExpr::as_symbol);
                        let r = r.ok_or_else(|| Self::syntax("lambda", "expected a rest parameter after '.'", p.span))?;
                        rest = Some(self.interner.intern(r));
                        if iter.next().is_some() {
                            return Err(Self::syntax("lambda", "only one rest parameter allowed", p.span));
                        }
                        break;
                    }
                    fixed.push(sym);
                }
            }
            _ => return Err(Self::syntax("lambda", "parameters must be a list", params.span)),
        }
        if body.is_empty() {
            return Err(Self::syntax("lambda", "body is empty", span));
        }
        let body = self.compile_body(body)?;
        Ok(Lambda { params: fixed, rest, body, name, span })
    }

    /// Converts quoted syntax into a runtime value.
    pub fn quote(&mut self, datum: &SExpr) -> Value {
        match &datum.kind {
            SExprKind::Number(n) => Value::Number(*n),
            SExprKind::Bool(b) => Value::Bool(*b),
            SExprKind::Str(s) => Value::Str(Rc::from(s.as_str())),
            SExprKind::Symbol(s) => Value::Symbol(self.interner.intern(s)),
            SExprKind::List(items) => {
                let values: Vec<Value> = items.iter().map(|i| self.quote(i)).collect();
                Value::list(values)
            }
        }
    }

    // ---------------------------------------------------------------
    // Evaluation
    // ---------------------------------------------------------------

    /// Compiles and evaluates one top-level form in the current world.
    pub fn eval_toplevel(&mut self, expr: &SExpr) -> EvalResult<Value> {
        let compiled = self.compile(expr)?;
        self.eval(&compiled, &None)
    }

    pub fn eval(&mut self, expr: &Expr, env: &Env) -> EvalResult<Value> {
        match expr {
            Expr::Const(v) => Ok(v.clone()),
            Expr::Var(sym, span) => self.lookup(*sym, env, *span),
            Expr::If(test, then, other) => {
                if self.eval(test, env)?.is_truthy() {
                    self.eval(then, env)
                } else {
                    match other {
                        Some(e) => self.eval(e, env),
                        None => Ok(Value::Nil),
                    }
                }
            }
            Expr::Lambda(lambda) => Ok(Value::Closure(Rc::new(Closure { lambda: lambda.clone(), env: env.clone() }))),
            Expr::Define(sym, value) => self.eval_define(*sym, value, env),
            Expr::Let(bindings, body) => self.eval_let(bindings, body, env),
            Expr::LetStar(bindings, body) => self.eval_let_star(bindings, body, env),
            Expr::Cond(clauses, fallback) => self.eval_cond(clauses, fallback.as_deref(), env),
            Expr::Case(key, clauses, fallback) => self.eval_case(key, clauses, fallback.as_deref(), env),
            Expr::And(parts) => self.eval_and(parts, env),
            Expr::Or(parts) => self.eval_or(parts, env),
            Expr::Begin(body) => self.eval_body(body, env),
            Expr::App(func, args, span) => self.eval_app(func, args, *span, env),
        }
    }

    // The special forms below live in their own frames so that the
    // recursive `eval` frame stays small.

    #[inline(never)]
    fn eval_app(&mut self, func: &Expr, args: &[Expr], span: Span, env: &Env) -> EvalResult<Value> {
        let f = self.eval(func, env)?;
        let mut values = Vec::with_capacity(args.len());
        for a in args {
            values.push(self.eval(a, env)?);
        }
        self.apply(&f, values, span)
    }

    #[inline(never)]
    fn eval_define(&mut self, sym: Symbol, value: &Expr, env: &Env) -> EvalResult<Value> {
        let value = self.eval(value, env)?;
        match env {
            None => self.set_global(sym, value),
            Some(frame) => {
                if matches!(&value, Value::Closure(c) if c.env.as_ref().is_some_and(|e| Rc::ptr_eq(e, frame))) {
                    self.self_referential.push(frame.clone());
                }
                frame.vars.borrow_mut().push((sym, value));
            }
        }
        Ok(Value::Nil)
    }

    #[inline(never)]
    fn eval_let(&mut self, bindings: &[(Symbol, Expr)], body: &[Expr], env: &Env) -> EvalResult<Value> {
        let mut vars = Vec::with_capacity(bindings.len());
        for (sym, e) in bindings {
            vars.push((*sym, self.eval(e, env)?));
        }
        let frame = Some(Frame::new(vars, env.clone()));
        self.eval_body(body, &frame)
    }

    #[inline(never)]
    fn eval_let_star(&mut self, bindings: &[(Symbol, Expr)], body: &[Expr], env: &Env) -> EvalResult<Value> {
        let mut scope = env.clone();
        for (sym, e) in bindings {
            let value = self.eval(e, &scope)?;
            scope = Some(Frame::new(alloc::vec![(*sym, value)], scope));
        }
        let frame = Some(Frame::new(Vec::new(), scope));
        self.eval_body(body, &frame)
    }

    #[inline(never)]
    fn eval_cond(&mut self, clauses: &[(Expr, Vec<Expr>)], fallback: Option<&[Expr]>, env: &Env) -> EvalResult<Value> {
        for (test, body) in clauses {
            let t = self.eval(test, env)?;
            if t.is_truthy() {
                return if body.is_empty() { Ok(t) } else { self.eval_body(body, env) };
            }
        }
        match fallback {
            Some(body) => self.eval_body(body, env),
            None => Ok(Value::Nil),
        }
    }

    #[inline(never)]
    fn eval_case(&mut self, key: &Expr, clauses: &[CaseClause], fallback: Option<&[Expr]>, env: &Env) -> EvalResult<Value> {
        let key = self.eval(key, env)?;
        for clause in clauses {
            if clause.data.iter().any(|d| d.is_equal(&key)) {
                return self.eval_body(&clause.body, env);
            }
        }
        match fallback {
            Some(body) => self.eval_body(body, env),
            None => Ok(Value::Nil),
        }
    }

    #[inline(never)]
    fn eval_and(&mut self, parts: &[Expr], env: &Env) -> EvalResult<Value> {
        let mut last = Value::Bool(true);
        for p in parts {
            last = self.eval(p, env)?;
            if !last.is_truthy() {
                return Ok(last);
            }
        }
        Ok(last)
    }

    #[inline(never)]
    fn eval_or(&mut self, parts: &[Expr], env: &Env) -> EvalResult<Value> {
        for p in parts {
            let v = self.eval(p, env)?;
            if v.is_truthy() {
                return Ok(v);
            }
        }
        Ok(Value::Bool(false))
    }

    fn eval_body(&mut self, body: &[Expr], env: &Env) -> EvalResult<Value> {
        let mut last = Value::Nil;
        for e in body {
            last = self.eval(e, env)?;
        }
        Ok(last)
    }

    fn lookup(&self, sym: Symbol, env: &Env, span: Span) -> EvalResult<Value> {
        let mut cur = env.as_ref();
        while let Some(frame) = cur {
            if let Some((_, v)) = frame.vars.borrow().iter().rev().find(|(s, _)| *s == sym) {
                return Ok(v.clone());
            }
            cur = frame.parent.as_ref();
        }
        match self.global(sym) {
            Some(v) => Ok(v.clone()),
            None => Err(EvalError::Unbound { name: self.interner.name(sym).to_string(), span }),
        }
    }

    /// Applies a procedure to already-evaluated arguments.
    pub fn apply(&mut self, f: &Value, args: Vec<Value>, span: Span) -> EvalResult<Value> {
        match f {
            Value::Closure(closure) => {
                let lambda = &closure.lambda;
                let n = lambda.params.len();
                let ok = if lambda.rest.is_some() { args.len() >= n } else { args.len() == n };
                if !ok {
                    let name = lambda.name.map(|s| self.interner.name(s).to_string()).unwrap_or_else(|| "lambda".to_string());
                    let expected = if lambda.rest.is_some() { format!("at least {}", n) } else { format!("{}", n) };
                    return Err(EvalError::Arity { name, expected, got: args.len(), span });
                }
                if self.depth >= self.config.max_depth {
                    return Err(EvalError::DepthExceeded { limit: self.config.max_depth, span });
                }
                let mut vars = Vec::with_capacity(n + 1);
                let mut args = args.into_iter();
                for p in &lambda.params {
                    vars.push((*p, args.next().unwrap_or(Value::Nil)));
                }
                if let Some(rest) = lambda.rest {
                    let rest_values: Vec<Value> = args.collect();
                    vars.push((rest, Value::list(rest_values)));
                }
                let frame = Some(Frame::new(vars, closure.env.clone()));
                self.depth += 1;
                let result = self.eval_body(&lambda.body, &frame);
                self.depth -= 1;
                result
            }
            Value::Builtin(builtin) => {
                check_arity(builtin, args.len(), span)?;
                (builtin.func)(self, args, span)
            }
            Value::Memo(memo) => {
                let key = (memo.id, args);
                if let Some(v) = self.trace.memo.get(&key) {
                    return Ok(v.clone());
                }
                let (id, args) = key;
                let value = self.apply(&memo.inner, args.clone(), span)?;
                self.trace.memo.insert((id, args), value.clone());
                Ok(value)
            }
            Value::Gensym(prefix) => {
                if !args.is_empty() {
                    return Err(EvalError::Arity { name: "gensym".to_string(), expected: "0".to_string(), got: args.len(), span });
                }
                let counter = self.trace.gensyms.entry(prefix.clone()).or_insert(0);
                let n = *counter;
                *counter += 1;
                let name = format!("{}{}", prefix, n);
                Ok(Value::Symbol(self.interner.intern(&name)))
            }
            other => Err(EvalError::NotAProcedure { value: self.to_datum(other).to_string(), span }),
        }
    }

    pub(crate) fn make_memo(&mut self, inner: Value) -> Value {
        let id = self.trace.fresh_memo_id();
        Value::Memo(Rc::new(MemoFn { id, inner }))
    }

    pub fn symbol_name(&self, sym: Symbol) -> &str {
        self.interner.name(sym)
    }
}

fn check_arity(builtin: &Builtin, got: usize, span: Span) -> EvalResult<()> {
    let (ok, expected) = match builtin.arity {
        Arity::Exact(n) => (got == n, format!("{}", n)),
        Arity::AtLeast(n) => (got >= n, format!("at least {}", n)),
        Arity::Range(lo, hi) => (got >= lo && got <= hi, format!("{} to {}", lo, hi)),
    };
    if ok {
        Ok(())
    } else {
        Err(EvalError::Arity { name: builtin.name.to_string(), expected, got, span })
    }
}

/// Evaluates every form in `text` in a fresh world and returns the last
/// value. Convenient for tests and the REPL's expert mode.
pub fn eval_str(text: &str, seed: u64) -> Result<Datum, crate::Error> {
    let unit = crate::sexpr::parse(text)?;
    let mut ev = Evaluator::default();
    ev.reset(seed);
    let mut last = Value::Nil;
    for form in &unit.forms {
        last = ev.eval_toplevel(form)?;
    }
    Ok(ev.to_datum(&last))
}

#[cfg(test)]
mod tests {
    use alloc::string::ToString;
    use super::*;

    fn run(text: &str) -> Datum {
        eval_str(text, 7).unwrap()
    }

    fn err(text: &str) -> EvalError {
        match eval_str(text, 7) {
            Err(crate::Error::Eval(e)) => e,
            other => panic!("expected evaluation error, got {:?}", other),
        }
    }

    #[test]
    fn arithmetic_and_lambda() {
        assert_eq!(run("(+ 1 2)"), Datum::Number(3.0));
        assert_eq!(run("((lambda (x) (* x x)) 3)"), Datum::Number(9.0));
    }

    #[test]
    fn case_with_quoted_data() {
        assert_eq!(run("(case 'lawn (('lawn) 7) (else 0))"), Datum::Number(7.0));
        assert_eq!(run("(case 'road (('lawn) 7) (else 0))"), Datum::Number(0.0));
        assert_eq!(run("(case 'b ((a b c) 1))"), Datum::Number(1.0));
    }

    #[test]
    fn only_false_is_false() {
        assert_eq!(run("(if 0 'a 'b)"), Datum::symbol("a"));
        assert_eq!(run("(if '() 'a 'b)"), Datum::symbol("a"));
        assert_eq!(run("(if false 'a 'b)"), Datum::symbol("b"));
    }

    #[test]
    fn lexical_capture() {
        assert_eq!(run("(define y 2) (define f (let ((y 2)) (lambda (x) (+ x y)))) (define y 100) (f 1)"), Datum::Number(3.0));
    }

    #[test]
    fn define_sugar_and_redefinition() {
        assert_eq!(run("(define (sq x) (* x x)) (define (sq x) (+ x x)) (sq 5)"), Datum::Number(10.0));
    }

    #[test]
    fn internal_defines_recursive_helper() {
        let text = "(define (rev l) (define (aux acc l) (if (null? l) acc (aux (cons (car l) acc) (cdr l)))) (aux '() l)) (rev '(1 2 3))";
        assert_eq!(run(text), Datum::list([1.0, 2.0, 3.0].into_iter().rev().map(Datum::Number)));
    }

    #[test]
    fn let_star_rebinding() {
        assert_eq!(run("(let* ((a 1) (b (+ a 1)) (a (* b 10))) (list a b))"), Datum::list([Datum::Number(20.0), Datum::Number(2.0)]));
    }

    #[test]
    fn short_circuit() {
        assert_eq!(run("(and false (undefined-thing))"), Datum::Bool(false));
        assert_eq!(run("(or 1 (undefined-thing))"), Datum::Number(1.0));
        assert_eq!(run("(and)"), Datum::Bool(true));
    }

    #[test]
    fn cond_with_else() {
        assert_eq!(run("(cond ((> 1 2) 'a) ((> 2 1) 'b) (else 'c))"), Datum::symbol("b"));
        assert_eq!(run("(cond ((> 1 2) 'a) (else 'c))"), Datum::symbol("c"));
    }

    #[test]
    fn rest_parameters() {
        assert_eq!(run("((lambda (a . more) (length more)) 1 2 3)"), Datum::Number(2.0));
        assert_eq!(run("((lambda args (length args)) 1 2 3)"), Datum::Number(3.0));
    }

    #[test]
    fn unbound_symbol_names_itself() {
        let e = err("(beats 'a 'b)");
        assert_eq!(e.unbound_name(), Some("beats"));
        assert_eq!(e.span(), Span::new(1, 6));
    }

    #[test]
    fn arity_mismatch() {
        assert!(matches!(err("((lambda (x) x) 1 2)"), EvalError::Arity { got: 2, .. }));
        assert!(matches!(err("(car)"), EvalError::Arity { .. }));
    }

    #[test]
    fn applying_non_procedure() {
        assert!(matches!(err("(1 2)"), EvalError::NotAProcedure { .. }));
    }

    #[test]
    fn runaway_recursion_is_reported() {
        let e = err("(define (loop n) (+ 1 (loop n))) (loop 0)");
        assert!(matches!(e, EvalError::DepthExceeded { limit: DEFAULT_MAX_DEPTH, .. }));
    }

    #[test]
    fn memoized_function_is_stable_within_world() {
        let text = "(define strength (mem (lambda (p) (gaussian 50 20)))) (list (strength 'josh) (strength 'josh) (strength 'lio))";
        let d = run(text);
        let items = d.list_items().unwrap();
        assert_eq!(items[0], items[1]);
        assert_ne!(items[0], items[2]);
    }

    #[test]
    fn gensym_counts_per_prefix() {
        let d = run("(define g (make-gensym \"person-\")) (list (g) (g) (g))");
        assert_eq!(d.to_string(), "(person-0 person-1 person-2)");
    }

    #[test]
    fn reset_clears_world_state() {
        let mut ev = Evaluator::default();
        ev.reset(1);
        let form = crate::sexpr::parse_one("(define x 5)").unwrap();
        ev.eval_toplevel(&form).unwrap();
        assert!(ev.global_by_name("x").is_some());
        ev.reset(2);
        assert!(ev.global_by_name("x").is_none());
        assert!(ev.global_by_name("map").is_some());
    }

    #[test]
    fn seeded_worlds_reproduce() {
        let text = "(define f (mem (lambda (x) (uniform 0 1)))) (list (f 1) (gaussian 0 1) (flip 0.3) (f 2))";
        assert_eq!(eval_str(text, 99).unwrap(), eval_str(text, 99).unwrap());
        assert_ne!(eval_str(text, 99).unwrap(), eval_str(text, 100).unwrap());
    }

    #[test]
    fn malformed_special_forms() {
        assert!(matches!(err("(if)"), EvalError::Syntax { .. }));
        assert!(matches!(err("(let (x 1) x)"), EvalError::Syntax { .. }));
        assert!(matches!(err("(lambda (1) 2)"), EvalError::Syntax { .. }));
    }
}
