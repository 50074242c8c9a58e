//! The builtin procedure catalog and the stochastic primitives.
//!
//! Every builtin receives already-evaluated arguments. Stochastic primitives
//! draw from the current world's random stream, so their results depend only
//! on the world seed and the order of calls.

use alloc::format;
use alloc::rc::Rc;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::eval::{EvalError, EvalResult, Evaluator};
use crate::sexpr::{format_number, Span};
use crate::value::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arity {
    Exact(usize),
    AtLeast(usize),
    Range(usize, usize),
}

pub type BuiltinFn = fn(&mut Evaluator, Vec<Value>, Span) -> EvalResult<Value>;

pub struct Builtin {
    pub name: &'static str,
    pub arity: Arity,
    pub func: BuiltinFn,
}

impl core::fmt::Debug for Builtin {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "#<builtin {}>", self.name)
    }
}

/// Names of the primitives that draw from the world's random stream.
pub const DISTRIBUTIONS: &[&str] =
    &["flip", "gaussian", "normal", "uniform", "uniform-draw", "exponential", "bounded-geometric", "shuffle-unique"];

pub fn catalog() -> &'static [Builtin] {
    CATALOG
}

pub fn lookup(name: &str) -> Option<&'static Builtin> {
    CATALOG.iter().find(|b| b.name == name)
}

pub fn is_builtin(name: &str) -> bool {
    lookup(name).is_some()
}

macro_rules! b {
    ($name:expr, $arity:expr, $func:expr) => {
        Builtin { name: $name, arity: $arity, func: $func }
    };
}

use Arity::{AtLeast, Exact, Range};

static CATALOG: &[Builtin] = &[
    // arithmetic
    b!("+", AtLeast(0), add),
    b!("-", AtLeast(1), sub),
    b!("*", AtLeast(0), mul),
    b!("/", AtLeast(1), div),
    b!("abs", Exact(1), |_, a, s| unary("abs", &a, s, libm::fabs)),
    b!("floor", Exact(1), |_, a, s| unary("floor", &a, s, libm::floor)),
    b!("ceiling", Exact(1), |_, a, s| unary("ceiling", &a, s, libm::ceil)),
    b!("round", Exact(1), |_, a, s| unary("round", &a, s, libm::round)),
    b!("sqrt", Exact(1), |_, a, s| unary("sqrt", &a, s, libm::sqrt)),
    b!("exp", Exact(1), |_, a, s| unary("exp", &a, s, libm::exp)),
    b!("log", Exact(1), |_, a, s| unary("log", &a, s, libm::log)),
    b!("expt", Exact(2), |_, a, s| Ok(Value::Number(libm::pow(num("expt", &a[0], s)?, num("expt", &a[1], s)?)))),
    b!("modulo", Exact(2), modulo),
    b!("mod", Exact(2), modulo),
    b!("min", AtLeast(1), |_, a, s| fold_numbers("min", &a, s, f64::min)),
    b!("max", AtLeast(1), |_, a, s| fold_numbers("max", &a, s, f64::max)),
    // comparison
    b!("=", AtLeast(1), |_, a, s| compare("=", &a, s, |x, y| x == y)),
    b!("<", AtLeast(1), |_, a, s| compare("<", &a, s, |x, y| x < y)),
    b!(">", AtLeast(1), |_, a, s| compare(">", &a, s, |x, y| x > y)),
    b!("<=", AtLeast(1), |_, a, s| compare("<=", &a, s, |x, y| x <= y)),
    b!(">=", AtLeast(1), |_, a, s| compare(">=", &a, s, |x, y| x >= y)),
    b!("leq", AtLeast(1), |_, a, s| compare("leq", &a, s, |x, y| x <= y)),
    b!("not", Exact(1), |_, a, _| Ok(Value::Bool(!a[0].is_truthy()))),
    b!("equal?", Exact(2), |_, a, _| Ok(Value::Bool(a[0].is_equal(&a[1])))),
    b!("eq?", Exact(2), |_, a, _| Ok(Value::Bool(a[0].is_eq(&a[1])))),
    // type predicates
    b!("null?", Exact(1), |_, a, _| Ok(Value::Bool(matches!(a[0], Value::Nil)))),
    b!("pair?", Exact(1), |_, a, _| Ok(Value::Bool(matches!(a[0], Value::Pair(_))))),
    b!("list?", Exact(1), |_, a, _| Ok(Value::Bool(a[0].list_items().is_some()))),
    b!("number?", Exact(1), |_, a, _| Ok(Value::Bool(matches!(a[0], Value::Number(_))))),
    b!("symbol?", Exact(1), |_, a, _| Ok(Value::Bool(matches!(a[0], Value::Symbol(_))))),
    b!("string?", Exact(1), |_, a, _| Ok(Value::Bool(matches!(a[0], Value::Str(_))))),
    b!("boolean?", Exact(1), |_, a, _| Ok(Value::Bool(matches!(a[0], Value::Bool(_))))),
    b!("procedure?", Exact(1), |_, a, _| Ok(Value::Bool(a[0].is_procedure()))),
    // pairs and lists
    b!("pair", Exact(2), cons),
    b!("cons", Exact(2), cons),
    b!("list", AtLeast(0), |_, a, _| Ok(Value::list(a))),
    b!("car", Exact(1), |_, a, s| car("car", &a[0], s)),
    b!("first", Exact(1), |_, a, s| car("first", &a[0], s)),
    b!("cdr", Exact(1), |_, a, s| cdr("cdr", &a[0], s)),
    b!("rest", Exact(1), |_, a, s| cdr("rest", &a[0], s)),
    b!("second", Exact(1), |_, a, s| nth("second", &a[0], 1, s)),
    b!("third", Exact(1), |_, a, s| nth("third", &a[0], 2, s)),
    b!("last", Exact(1), last),
    b!("append", AtLeast(0), append),
    b!("length", Exact(1), |_, a, s| Ok(Value::Number(items("length", &a[0], s)?.len() as f64))),
    b!("reverse", Exact(1), |_, a, s| Ok(Value::list(items("reverse", &a[0], s)?.into_iter().rev().collect::<Vec<_>>()))),
    b!("list-ref", Exact(2), |_, a, s| list_index("list-ref", &a, 0, s)),
    b!("list-elt", Exact(2), |_, a, s| list_index("list-elt", &a, 1, s)),
    b!("member", Exact(2), member),
    b!("member?", Exact(2), |ev, a, s| Ok(Value::Bool(member(ev, a, s)?.is_truthy()))),
    b!("assoc", Exact(2), assoc),
    b!("lookup", Exact(2), lookup_key),
    b!("update-list", Exact(3), update_list),
    b!("shallow-flatten", Exact(1), shallow_flatten),
    b!("zip", AtLeast(1), zip),
    b!("repeat", Exact(2), repeat),
    b!("max_cdr", Exact(1), max_cdr),
    // higher-order
    b!("map", AtLeast(2), map),
    b!("filter", Exact(2), filter),
    b!("fold", Exact(3), fold),
    b!("apply", Exact(2), |ev, a, s| {
        let args = items("apply", &a[1], s)?;
        ev.apply(&a[0], args, s)
    }),
    b!("some", Range(1, 2), |ev, a, s| quantifier("some", ev, a, s, true)),
    b!("all", Range(1, 2), |ev, a, s| quantifier("all", ev, a, s, false)),
    b!("sum", Exact(1), |_, a, s| {
        let mut total = 0.0;
        for v in items("sum", &a[0], s)? {
            total += num("sum", &v, s)?;
        }
        Ok(Value::Number(total))
    }),
    b!("count", Range(1, 2), count),
    // strings
    b!("stringify", Exact(1), |ev, a, _| Ok(Value::Str(Rc::from(stringify(ev, &a[0]).as_str())))),
    b!("string-append", AtLeast(0), |ev, a, _| {
        let mut out = String::new();
        for v in &a {
            out.push_str(&stringify(ev, v));
        }
        Ok(Value::Str(Rc::from(out.as_str())))
    }),
    b!("string-length", Exact(1), |_, a, s| Ok(Value::Number(string("string-length", &a[0], s)?.chars().count() as f64))),
    b!("string-slice", Range(2, 3), string_slice),
    b!("string->number", Exact(1), |_, a, s| {
        let text = string("string->number", &a[0], s)?;
        Ok(text.trim().parse::<f64>().map(Value::Number).unwrap_or(Value::Bool(false)))
    }),
    // world randomness and memoization
    b!("flip", Range(0, 1), flip),
    b!("gaussian", Exact(2), gaussian),
    b!("normal", Exact(2), gaussian),
    b!("uniform", Exact(2), uniform),
    b!("uniform-draw", Exact(1), uniform_draw),
    b!("exponential", Exact(1), exponential),
    b!("bounded-geometric", Exact(3), bounded_geometric),
    b!("shuffle-unique", Exact(1), shuffle_unique),
    b!("make-gensym", Exact(1), make_gensym),
    b!("make_gensym", Exact(1), make_gensym),
    b!("mem", Exact(1), |ev, a, s| {
        if !a[0].is_procedure() {
            return Err(EvalError::type_error("mem", "expects a procedure", s));
        }
        let inner = a.into_iter().next().unwrap_or(Value::Nil);
        Ok(ev.make_memo(inner))
    }),
];

// -------------------------------------------------------------------
// argument helpers
// -------------------------------------------------------------------

fn num(op: &str, v: &Value, span: Span) -> EvalResult<f64> {
    v.as_number().ok_or_else(|| EvalError::type_error(op, format!("expected a number, got {}", v.kind_name()), span))
}

fn items(op: &str, v: &Value, span: Span) -> EvalResult<Vec<Value>> {
    v.list_items().ok_or_else(|| EvalError::type_error(op, format!("expected a list, got {}", v.kind_name()), span))
}

fn string<'a>(op: &str, v: &'a Value, span: Span) -> EvalResult<&'a str> {
    match v {
        Value::Str(s) => Ok(s),
        other => Err(EvalError::type_error(op, format!("expected a string, got {}", other.kind_name()), span)),
    }
}

fn is_integer(x: f64) -> bool {
    libm::trunc(x) == x
}

fn unary(op: &str, args: &[Value], span: Span, f: fn(f64) -> f64) -> EvalResult<Value> {
    Ok(Value::Number(f(num(op, &args[0], span)?)))
}

fn fold_numbers(op: &str, args: &[Value], span: Span, f: fn(f64, f64) -> f64) -> EvalResult<Value> {
    let mut acc = num(op, &args[0], span)?;
    for v in &args[1..] {
        acc = f(acc, num(op, v, span)?);
    }
    Ok(Value::Number(acc))
}

fn compare(op: &str, args: &[Value], span: Span, f: fn(f64, f64) -> bool) -> EvalResult<Value> {
    let mut prev = num(op, &args[0], span)?;
    let mut result = true;
    for v in &args[1..] {
        let next = num(op, v, span)?;
        result &= f(prev, next);
        prev = next;
    }
    Ok(Value::Bool(result))
}

// -------------------------------------------------------------------
// arithmetic
// -------------------------------------------------------------------

fn add(_: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let mut total = 0.0;
    for v in &args {
        total += num("+", v, span)?;
    }
    Ok(Value::Number(total))
}

fn mul(_: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let mut total = 1.0;
    for v in &args {
        total *= num("*", v, span)?;
    }
    Ok(Value::Number(total))
}

fn sub(_: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let first = num("-", &args[0], span)?;
    if args.len() == 1 {
        return Ok(Value::Number(-first));
    }
    let mut total = first;
    for v in &args[1..] {
        total -= num("-", v, span)?;
    }
    Ok(Value::Number(total))
}

fn div(_: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let first = num("/", &args[0], span)?;
    if args.len() == 1 {
        return Ok(Value::Number(1.0 / first));
    }
    let mut total = first;
    for v in &args[1..] {
        total /= num("/", v, span)?;
    }
    Ok(Value::Number(total))
}

fn modulo(_: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let a = num("modulo", &args[0], span)?;
    let b = num("modulo", &args[1], span)?;
    if b == 0.0 {
        return Err(EvalError::domain("modulo", "division by zero", span));
    }
    let r = libm::fmod(a, b);
    Ok(Value::Number(if r != 0.0 && (r < 0.0) != (b < 0.0) { r + b } else { r }))
}

// -------------------------------------------------------------------
// lists
// -------------------------------------------------------------------

fn cons(_: &mut Evaluator, args: Vec<Value>, _: Span) -> EvalResult<Value> {
    let mut it = args.into_iter();
    let car = it.next().unwrap_or(Value::Nil);
    let cdr = it.next().unwrap_or(Value::Nil);
    Ok(Value::cons(car, cdr))
}

fn car(op: &str, v: &Value, span: Span) -> EvalResult<Value> {
    match v {
        Value::Pair(p) => Ok(p.car.clone()),
        other => Err(EvalError::type_error(op, format!("expected a non-empty list, got {}", other.kind_name()), span)),
    }
}

fn cdr(op: &str, v: &Value, span: Span) -> EvalResult<Value> {
    match v {
        Value::Pair(p) => Ok(p.cdr.clone()),
        other => Err(EvalError::type_error(op, format!("expected a non-empty list, got {}", other.kind_name()), span)),
    }
}

fn nth(op: &str, v: &Value, n: usize, span: Span) -> EvalResult<Value> {
    let mut cur = v.clone();
    for _ in 0..n {
        cur = cdr(op, &cur, span)?;
    }
    car(op, &cur, span)
}

fn last(_: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let list = items("last", &args[0], span)?;
    list.last().cloned().ok_or_else(|| EvalError::domain("last", "empty list", span))
}

fn append(_: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let Some((tail, heads)) = args.split_last() else {
        return Ok(Value::Nil);
    };
    let mut all = Vec::new();
    for h in heads {
        all.extend(items("append", h, span)?);
    }
    Ok(all.into_iter().rev().fold(tail.clone(), |acc, v| Value::cons(v, acc)))
}

fn list_index(op: &str, args: &[Value], base: usize, span: Span) -> EvalResult<Value> {
    let list = items(op, &args[0], span)?;
    let idx = num(op, &args[1], span)?;
    let pos = idx - base as f64;
    if pos < 0.0 || !is_integer(pos) || pos as usize >= list.len() {
        return Err(EvalError::domain(op, format!("index {} out of range for list of length {}", format_number(idx), list.len()), span));
    }
    Ok(list[pos as usize].clone())
}

fn member(_: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let mut cur = args[1].clone();
    loop {
        match cur {
            Value::Nil => return Ok(Value::Bool(false)),
            Value::Pair(ref p) => {
                if p.car.is_equal(&args[0]) {
                    return Ok(cur.clone());
                }
                let next = p.cdr.clone();
                cur = next;
            }
            ref other => return Err(EvalError::type_error("member", format!("expected a list, got {}", other.kind_name()), span)),
        }
    }
}

/// The first entry of `alist` whose car equals `key`. Non-pair entries are
/// skipped.
fn find_entry(op: &str, alist: &Value, key: &Value, span: Span) -> EvalResult<Option<Value>> {
    for entry in items(op, alist, span)? {
        if let Value::Pair(p) = &entry {
            if p.car.is_equal(key) {
                return Ok(Some(entry.clone()));
            }
        }
    }
    Ok(None)
}

fn assoc(_: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    Ok(find_entry("assoc", &args[1], &args[0], span)?.unwrap_or(Value::Bool(false)))
}

/// `(lookup alist key)`: the value stored under `key`, or `()` when absent.
fn lookup_key(_: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    match find_entry("lookup", &args[0], &args[1], span)? {
        Some(Value::Pair(p)) => Ok(p.cdr.clone()),
        _ => Ok(Value::Nil),
    }
}

fn update_list(_: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let mut list = items("update-list", &args[0], span)?;
    let idx = num("update-list", &args[1], span)?;
    if idx < 0.0 || !is_integer(idx) || idx as usize >= list.len() {
        return Err(EvalError::domain("update-list", format!("index {} out of range", format_number(idx)), span));
    }
    list[idx as usize] = args[2].clone();
    Ok(Value::list(list))
}

fn shallow_flatten(_: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let mut out = Vec::new();
    for inner in items("shallow-flatten", &args[0], span)? {
        match inner.list_items() {
            Some(xs) => out.extend(xs),
            None => out.push(inner),
        }
    }
    Ok(Value::list(out))
}

fn zip(_: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let lists = args.iter().map(|l| items("zip", l, span)).collect::<EvalResult<Vec<_>>>()?;
    let n = lists.iter().map(Vec::len).min().unwrap_or(0);
    let rows: Vec<Value> = (0..n).map(|i| Value::list(lists.iter().map(|l| l[i].clone()).collect::<Vec<_>>())).collect();
    Ok(Value::list(rows))
}

fn repeat(ev: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let n = num("repeat", &args[0], span)?;
    if n < 0.0 || !is_integer(n) {
        return Err(EvalError::domain("repeat", "count must be a non-negative integer", span));
    }
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n as usize {
        out.push(ev.apply(&args[1], Vec::new(), span)?);
    }
    Ok(Value::list(out))
}

/// The pair with the largest numeric cdr; the earliest wins ties.
fn max_cdr(_: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let mut best: Option<(f64, Value)> = None;
    for entry in items("max_cdr", &args[0], span)? {
        let score = num("max_cdr", &cdr("max_cdr", &entry, span)?, span)?;
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, entry));
        }
    }
    best.map(|(_, e)| e).ok_or_else(|| EvalError::domain("max_cdr", "empty list", span))
}

// -------------------------------------------------------------------
// higher-order
// -------------------------------------------------------------------

fn map(ev: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let lists = args[1..].iter().map(|l| items("map", l, span)).collect::<EvalResult<Vec<_>>>()?;
    let n = lists.iter().map(Vec::len).min().unwrap_or(0);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let call_args = lists.iter().map(|l| l[i].clone()).collect();
        out.push(ev.apply(&args[0], call_args, span)?);
    }
    Ok(Value::list(out))
}

fn filter(ev: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let mut out = Vec::new();
    for x in items("filter", &args[1], span)? {
        if ev.apply(&args[0], alloc::vec![x.clone()], span)?.is_truthy() {
            out.push(x);
        }
    }
    Ok(Value::list(out))
}

/// Left fold, calling `(f element accumulator)`.
fn fold(ev: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let mut acc = args[1].clone();
    for x in items("fold", &args[2], span)? {
        acc = ev.apply(&args[0], alloc::vec![x, acc], span)?;
    }
    Ok(acc)
}

/// `(some list)` / `(some pred list)`, and likewise `all`.
fn quantifier(op: &str, ev: &mut Evaluator, args: Vec<Value>, span: Span, any: bool) -> EvalResult<Value> {
    let (pred, list) = match args.len() {
        1 => (None, &args[0]),
        _ => (Some(&args[0]), &args[1]),
    };
    for x in items(op, list, span)? {
        let hit = match pred {
            Some(p) => ev.apply(p, alloc::vec![x], span)?.is_truthy(),
            None => x.is_truthy(),
        };
        if hit == any {
            return Ok(Value::Bool(any));
        }
    }
    Ok(Value::Bool(!any))
}

/// `(count list)` counts non-false elements; `(count pred list)` counts
/// elements satisfying `pred`.
fn count(ev: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let (pred, list) = match args.len() {
        1 => (None, &args[0]),
        _ => (Some(&args[0]), &args[1]),
    };
    let mut n = 0usize;
    for x in items("count", list, span)? {
        let hit = match pred {
            Some(p) => ev.apply(p, alloc::vec![x], span)?.is_truthy(),
            None => x.is_truthy(),
        };
        n += hit as usize;
    }
    Ok(Value::Number(n as f64))
}

// -------------------------------------------------------------------
// strings
// -------------------------------------------------------------------

fn stringify(ev: &Evaluator, v: &Value) -> String {
    match v {
        Value::Str(s) => s.to_string(),
        Value::Symbol(s) => ev.symbol_name(*s).to_string(),
        other => ev.to_datum(other).to_string(),
    }
}

fn string_slice(_: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let text = string("string-slice", &args[0], span)?;
    let chars: Vec<char> = text.chars().collect();
    let clamp = |v: f64| if v < 0.0 { 0 } else { (v as usize).min(chars.len()) };
    let start = clamp(num("string-slice", &args[1], span)?);
    let end = match args.get(2) {
        Some(e) => clamp(num("string-slice", e, span)?),
        None => chars.len(),
    };
    let slice: String = chars[start..end.max(start)].iter().collect();
    Ok(Value::Str(Rc::from(slice.as_str())))
}

// -------------------------------------------------------------------
// randomness
// -------------------------------------------------------------------

fn probability(op: &str, v: &Value, span: Span) -> EvalResult<f64> {
    let p = num(op, v, span)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(EvalError::domain(op, format!("probability {} outside [0, 1]", format_number(p)), span));
    }
    Ok(p)
}

fn flip(ev: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let p = match args.first() {
        Some(v) => probability("flip", v, span)?,
        None => 0.5,
    };
    let u: f64 = ev.trace.rng.random();
    Ok(Value::Bool(u < p))
}

fn gaussian(ev: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let mu = num("gaussian", &args[0], span)?;
    let sigma = num("gaussian", &args[1], span)?;
    if !(sigma >= 0.0) {
        return Err(EvalError::domain("gaussian", "standard deviation must be non-negative", span));
    }
    let dist = Normal::new(mu, sigma).map_err(|_| EvalError::domain("gaussian", "standard deviation must be finite and non-negative", span))?;
    Ok(Value::Number(dist.sample(&mut ev.trace.rng)))
}

fn uniform(ev: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let a = num("uniform", &args[0], span)?;
    let b = num("uniform", &args[1], span)?;
    if b < a {
        return Err(EvalError::domain("uniform", "upper bound below lower bound", span));
    }
    let u: f64 = ev.trace.rng.random();
    Ok(Value::Number(a + (b - a) * u))
}

fn draw_index(ev: &mut Evaluator, n: usize) -> usize {
    ev.trace.rng.random_range(0..n as u32) as usize
}

fn uniform_draw(ev: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let list = items("uniform-draw", &args[0], span)?;
    if list.is_empty() {
        return Err(EvalError::domain("uniform-draw", "cannot draw from an empty list", span));
    }
    let i = draw_index(ev, list.len());
    Ok(list[i].clone())
}

fn exponential(ev: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let rate = num("exponential", &args[0], span)?;
    if rate.is_nan() || rate <= 0.0 {
        return Err(EvalError::domain("exponential", "rate must be positive", span));
    }
    let dist = Exp::new(rate).map_err(|_| EvalError::domain("exponential", "rate must be positive", span))?;
    Ok(Value::Number(dist.sample(&mut ev.trace.rng)))
}

/// `lo` plus the number of failures before the first success, clamped to
/// `hi`. Trials stop once the clamp is reached.
fn bounded_geometric(ev: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let p = probability("bounded-geometric", &args[0], span)?;
    let lo = num("bounded-geometric", &args[1], span)?;
    let hi = num("bounded-geometric", &args[2], span)?;
    if lo > hi {
        return Err(EvalError::domain("bounded-geometric", "lower bound exceeds upper bound", span));
    }
    let mut k = lo;
    while k < hi {
        let u: f64 = ev.trace.rng.random();
        if u < p {
            break;
        }
        k += 1.0;
    }
    Ok(Value::Number(k.min(hi)))
}

fn shuffle_unique(ev: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let mut list = items("shuffle-unique", &args[0], span)?;
    for i in (1..list.len()).rev() {
        let j = draw_index(ev, i + 1);
        list.swap(i, j);
    }
    Ok(Value::list(list))
}

fn make_gensym(ev: &mut Evaluator, args: Vec<Value>, span: Span) -> EvalResult<Value> {
    let prefix = match &args[0] {
        Value::Str(s) => s.clone(),
        Value::Symbol(s) => Rc::from(ev.symbol_name(*s)),
        other => return Err(EvalError::type_error("make-gensym", format!("expected a string prefix, got {}", other.kind_name()), span)),
    };
    Ok(Value::Gensym(prefix))
}

#[cfg(test)]
mod tests {
    use alloc::string::ToString;
    use crate::eval::eval_str;
    use crate::value::Datum;

    fn run(text: &str) -> Datum {
        eval_str(text, 3).unwrap()
    }

    fn num(text: &str) -> f64 {
        run(text).as_number().unwrap()
    }

    #[test]
    fn catalog_names_are_unique() {
        let mut names: std::vec::Vec<_> = super::catalog().iter().map(|b| b.name).collect();
        names.sort();
        let before = names.len();
        names.dedup();
        assert_eq!(before, names.len());
    }

    #[test]
    fn list_basics() {
        assert_eq!(num("(length '(1 2 3))"), 3.0);
        assert_eq!(num("(list-ref '(10 20 30) 0)"), 10.0);
        assert_eq!(num("(list-elt '(10 20 30) 1)"), 10.0);
        assert_eq!(num("(third '(1 2 3))"), 3.0);
        assert_eq!(num("(last '(1 2 3))"), 3.0);
        assert_eq!(run("(append '(1) '(2 3) '())").to_string(), "(1 2 3)");
        assert_eq!(run("(pair 'shape 'mug)").to_string(), "(shape . mug)");
        assert_eq!(run("(reverse '(1 2 3))").to_string(), "(3 2 1)");
    }

    #[test]
    fn association_lists() {
        assert_eq!(num("(lookup (list (pair 'a 1) (pair 'b 2)) 'b)"), 2.0);
        assert_eq!(run("(lookup (list (pair 'a 1)) 'z)"), Datum::Nil);
        assert_eq!(run("(lookup '() 'z)"), Datum::Nil);
        assert_eq!(run("(assoc 'z (list (pair 'a 1)))"), Datum::Bool(false));
        assert_eq!(run("(cdr (assoc 'a (list (pair 'a 1))))"), Datum::Number(1.0));
        assert_eq!(run("(update-list '(a b c) 1 'x)").to_string(), "(a x c)");
    }

    #[test]
    fn max_cdr_first_wins() {
        assert_eq!(run("(max_cdr (list (pair 'x 3) (pair 'y 3)))").to_string(), "(x . 3)");
        assert_eq!(run("(max_cdr (list (pair 'x 3) (pair 'y 4)))").to_string(), "(y . 4)");
        assert_eq!(run("(max_cdr (list (pair 'x -1) (pair 'y -2)))").to_string(), "(x . -1)");
    }

    #[test]
    fn higher_order() {
        assert_eq!(num("(fold + 0 '(1 2 3))"), 6.0);
        assert_eq!(run("(fold cons '() '(1 2 3))").to_string(), "(3 2 1)");
        assert_eq!(run("(map + '(1 2) '(10 20))").to_string(), "(11 22)");
        assert_eq!(run("(filter (lambda (x) (> x 1)) '(1 2 3))").to_string(), "(2 3)");
        assert_eq!(num("(apply + '(1 2 3))"), 6.0);
        assert_eq!(run("(some '(false 1))"), Datum::Bool(true));
        assert_eq!(run("(all '(true false))"), Datum::Bool(false));
        assert_eq!(run("(all '())"), Datum::Bool(true));
        assert_eq!(num("(sum '(1 2 3.5))"), 6.5);
        assert_eq!(num("(count (list true false true))"), 2.0);
        assert_eq!(num("(count (lambda (x) (> x 1)) '(1 2 3))"), 2.0);
        assert_eq!(run("(zip '(a b) '(1 2 3))").to_string(), "((a 1) (b 2))");
        assert_eq!(run("(shallow-flatten '((1 2) () (3)))").to_string(), "(1 2 3)");
        assert_eq!(run("(repeat 3 (lambda () 'x))").to_string(), "(x x x)");
        assert_eq!(run("(member? 'b '(a b))"), Datum::Bool(true));
        assert_eq!(run("(member 'b '(a b c))").to_string(), "(b c)");
    }

    #[test]
    fn strings() {
        assert_eq!(num("(string->number (string-slice (stringify 'person-12) (string-length \"person-\")))"), 12.0);
        assert_eq!(run("(string->number \"abc\")"), Datum::Bool(false));
        assert_eq!(run("(string-slice \"abc\" 9)"), Datum::Str("".into()));
    }

    #[test]
    fn arithmetic_edges() {
        assert_eq!(num("(- 5)"), -5.0);
        assert_eq!(num("(/ 2)"), 0.5);
        assert_eq!(num("(expt 3 2)"), 9.0);
        assert_eq!(num("(min 12 3.5)"), 3.5);
        assert_eq!(num("(floor 3.7)"), 3.0);
        assert_eq!(num("(modulo -1 3)"), 2.0);
        assert_eq!(run("(< 1 2 3)"), Datum::Bool(true));
        assert_eq!(run("(< 1 3 2)"), Datum::Bool(false));
        assert_eq!(run("(leq 2 2)"), Datum::Bool(true));
        assert_eq!(run("(eq? 'a 'a)"), Datum::Bool(true));
        assert_eq!(run("(equal? '(1 (2)) '(1 (2)))"), Datum::Bool(true));
    }

    #[test]
    fn degenerate_flips() {
        for seed in 0..200 {
            assert_eq!(eval_str("(flip 0)", seed).unwrap(), Datum::Bool(false));
            assert_eq!(eval_str("(flip 1)", seed).unwrap(), Datum::Bool(true));
        }
    }

    #[test]
    fn distribution_domain_errors() {
        assert!(eval_str("(flip 1.5)", 0).is_err());
        assert!(eval_str("(gaussian 0 -1)", 0).is_err());
        assert!(eval_str("(uniform-draw '())", 0).is_err());
        assert!(eval_str("(bounded-geometric 0.5 3 1)", 0).is_err());
        assert!(eval_str("(exponential 0)", 0).is_err());
    }

    #[test]
    fn shuffle_is_a_permutation() {
        for seed in 0..50 {
            let d = eval_str("(shuffle-unique '(avery blake charlie dana))", seed).unwrap();
            let mut names: std::vec::Vec<std::string::String> = d.list_items().unwrap().iter().map(|x| x.to_string()).collect();
            names.sort();
            assert_eq!(names, ["avery", "blake", "charlie", "dana"]);
        }
    }
}
