//! Runtime values of the probabilistic language, plus [`Datum`], the
//! interpreter-independent form used to carry results out of a world.

use alloc::rc::Rc;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::hash::{Hash, Hasher};

use hashbrown::HashMap;
use serde::{Deserialize, Serialize};

use crate::builtins::Builtin;
use crate::eval::{Env, Lambda};
use crate::sexpr::{write_number, write_string};

/// Interned symbol. Only meaningful together with the [`Interner`] that
/// produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Symbol(pub(crate) u32);

impl Symbol {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Default)]
pub struct Interner {
    names: Vec<Rc<str>>,
    index: HashMap<Rc<str>, Symbol>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> Symbol {
        if let Some(sym) = self.index.get(name) {
            return *sym;
        }
        let sym = Symbol(self.names.len() as u32);
        let name: Rc<str> = Rc::from(name);
        self.names.push(name.clone());
        self.index.insert(name, sym);
        sym
    }

    pub fn lookup(&self, name: &str) -> Option<Symbol> {
        self.index.get(name).copied()
    }

    pub fn name(&self, sym: Symbol) -> &str {
        &self.names[sym.index()]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

pub struct Pair {
    pub car: Value,
    pub cdr: Value,
}

pub struct Closure {
    pub lambda: Rc<Lambda>,
    pub env: Env,
}

pub struct MemoFn {
    pub id: u64,
    pub inner: Value,
}

#[derive(Clone)]
pub enum Value {
    Nil,
    Bool(bool),
    Number(f64),
    Symbol(Symbol),
    Str(Rc<str>),
    Pair(Rc<Pair>),
    Closure(Rc<Closure>),
    Builtin(&'static Builtin),
    Memo(Rc<MemoFn>),
    /// Procedure returned by `make-gensym`; carries its prefix.
    Gensym(Rc<str>),
}

impl Value {
    pub fn cons(car: Value, cdr: Value) -> Value {
        Value::Pair(Rc::new(Pair { car, cdr }))
    }

    pub fn list<I>(items: I) -> Value
    where
        I: IntoIterator<Item = Value>,
        I::IntoIter: DoubleEndedIterator,
    {
        items.into_iter().rev().fold(Value::Nil, |tail, head| Value::cons(head, tail))
    }

    /// Only `false` is false.
    pub fn is_truthy(&self) -> bool {
        !matches!(self, Value::Bool(false))
    }

    pub fn is_procedure(&self) -> bool {
        matches!(self, Value::Closure(_) | Value::Builtin(_) | Value::Memo(_) | Value::Gensym(_))
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(n) => Some(*n),
            _ => None,
        }
    }

    /// Elements of a proper list, or `None` if the value is not one.
    pub fn list_items(&self) -> Option<Vec<Value>> {
        let mut out = Vec::new();
        let mut cur = self;
        loop {
            match cur {
                Value::Nil => return Some(out),
                Value::Pair(p) => {
                    out.push(p.car.clone());
                    cur = &p.cdr;
                }
                _ => return None,
            }
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Value::Nil => "empty list",
            Value::Bool(_) => "boolean",
            Value::Number(_) => "number",
            Value::Symbol(_) => "symbol",
            Value::Str(_) => "string",
            Value::Pair(_) => "pair",
            Value::Closure(_) | Value::Builtin(_) | Value::Memo(_) | Value::Gensym(_) => "procedure",
        }
    }

    /// `eq?`: value equality on atoms, identity on compound values.
    pub fn is_eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Pair(a), Value::Pair(b)) => Rc::ptr_eq(a, b),
            _ => self.is_equal(other),
        }
    }

    /// `equal?`: deep structural equality.
    pub fn is_equal(&self, other: &Value) -> bool {
        let (mut a, mut b) = (self, other);
        loop {
            match (a, b) {
                (Value::Pair(x), Value::Pair(y)) => {
                    if Rc::ptr_eq(x, y) {
                        return true;
                    }
                    if !x.car.is_equal(&y.car) {
                        return false;
                    }
                    a = &x.cdr;
                    b = &y.cdr;
                }
                (Value::Nil, Value::Nil) => return true,
                (Value::Bool(x), Value::Bool(y)) => return x == y,
                (Value::Number(x), Value::Number(y)) => return x == y,
                (Value::Symbol(x), Value::Symbol(y)) => return x == y,
                (Value::Str(x), Value::Str(y)) => return x == y,
                (Value::Closure(x), Value::Closure(y)) => return Rc::ptr_eq(x, y),
                (Value::Builtin(x), Value::Builtin(y)) => return x.name == y.name,
                (Value::Memo(x), Value::Memo(y)) => return x.id == y.id,
                (Value::Gensym(x), Value::Gensym(y)) => return Rc::ptr_eq(x, y),
                _ => return false,
            }
        }
    }

    fn hash_into<H: Hasher>(&self, state: &mut H) {
        let mut cur = self;
        loop {
            match cur {
                Value::Pair(p) => {
                    state.write_u8(6);
                    p.car.hash_into(state);
                    cur = &p.cdr;
                    continue;
                }
                Value::Nil => state.write_u8(0),
                Value::Bool(b) => {
                    state.write_u8(1);
                    state.write_u8(*b as u8);
                }
                Value::Number(n) => {
                    state.write_u8(2);
                    let n = if *n == 0.0 { 0.0 } else { *n };
                    state.write_u64(n.to_bits());
                }
                Value::Symbol(s) => {
                    state.write_u8(3);
                    state.write_u32(s.0);
                }
                Value::Str(s) => {
                    state.write_u8(4);
                    s.hash(state);
                }
                Value::Closure(c) => {
                    state.write_u8(7);
                    state.write_usize(Rc::as_ptr(c) as *const u8 as usize);
                }
                Value::Builtin(b) => {
                    state.write_u8(8);
                    b.name.hash(state);
                }
                Value::Memo(m) => {
                    state.write_u8(9);
                    state.write_u64(m.id);
                }
                Value::Gensym(g) => {
                    state.write_u8(10);
                    state.write_usize(Rc::as_ptr(g) as *const u8 as usize);
                }
            }
            return;
        }
    }

    /// Converts to an interner-free [`Datum`].
    pub fn to_datum(&self, interner: &Interner) -> Datum {
        match self {
            Value::Nil => Datum::Nil,
            Value::Bool(b) => Datum::Bool(*b),
            Value::Number(n) => Datum::Number(*n),
            Value::Symbol(s) => Datum::Symbol(interner.name(*s).to_string()),
            Value::Str(s) => Datum::Str(s.to_string()),
            Value::Pair(_) => {
                let mut heads = Vec::new();
                let mut cur = self;
                while let Value::Pair(p) = cur {
                    heads.push(p.car.to_datum(interner));
                    cur = &p.cdr;
                }
                let tail = cur.to_datum(interner);
                heads.into_iter().rev().fold(tail, |tail, head| Datum::Pair(alloc::boxed::Box::new((head, tail))))
            }
            Value::Closure(c) => match c.lambda.name {
                Some(name) => Datum::Procedure(interner.name(name).to_string()),
                None => Datum::Procedure("lambda".to_string()),
            },
            Value::Builtin(b) => Datum::Procedure(b.name.to_string()),
            Value::Memo(_) => Datum::Procedure("mem".to_string()),
            Value::Gensym(p) => Datum::Procedure(alloc::format!("gensym:{}", p)),
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.is_equal(other)
    }
}

impl Eq for Value {}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.hash_into(state)
    }
}

/// A value detached from any interpreter: symbols are plain strings and
/// procedures are reduced to their names. Query results are reported in
/// this form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Datum {
    Nil,
    Bool(bool),
    Number(f64),
    Symbol(String),
    Str(String),
    Pair(alloc::boxed::Box<(Datum, Datum)>),
    Procedure(String),
}

impl Datum {
    pub fn cons(car: Datum, cdr: Datum) -> Datum {
        Datum::Pair(alloc::boxed::Box::new((car, cdr)))
    }

    pub fn list<I>(items: I) -> Datum
    where
        I: IntoIterator<Item = Datum>,
        I::IntoIter: DoubleEndedIterator,
    {
        items.into_iter().rev().fold(Datum::Nil, |tail, head| Datum::cons(head, tail))
    }

    pub fn symbol(name: &str) -> Datum {
        Datum::Symbol(name.to_string())
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Datum::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Datum::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_symbol(&self) -> Option<&str> {
        match self {
            Datum::Symbol(s) => Some(s),
            _ => None,
        }
    }

    pub fn car(&self) -> Option<&Datum> {
        match self {
            Datum::Pair(p) => Some(&p.0),
            _ => None,
        }
    }

    pub fn cdr(&self) -> Option<&Datum> {
        match self {
            Datum::Pair(p) => Some(&p.1),
            _ => None,
        }
    }

    /// Elements of a proper list.
    pub fn list_items(&self) -> Option<Vec<&Datum>> {
        let mut out = Vec::new();
        let mut cur = self;
        loop {
            match cur {
                Datum::Nil => return Some(out),
                Datum::Pair(p) => {
                    out.push(&p.0);
                    cur = &p.1;
                }
                _ => return None,
            }
        }
    }

    /// Association-list lookup: the tail of the first entry whose head
    /// equals `key`.
    pub fn get(&self, key: &str) -> Option<&Datum> {
        let mut cur = self;
        while let Datum::Pair(p) = cur {
            if let Datum::Pair(entry) = &p.0 {
                if entry.0.as_symbol() == Some(key) {
                    return Some(&entry.1);
                }
            }
            cur = &p.1;
        }
        None
    }

    /// Association-list lookup keyed by a number, as used for per-time states.
    pub fn get_number_key(&self, key: f64) -> Option<&Datum> {
        let mut cur = self;
        while let Datum::Pair(p) = cur {
            if let Datum::Pair(entry) = &p.0 {
                if entry.0.as_number() == Some(key) {
                    return Some(&entry.1);
                }
            }
            cur = &p.1;
        }
        None
    }
}

impl fmt::Display for Datum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Datum::Nil => f.write_str("()"),
            Datum::Bool(true) => f.write_str("true"),
            Datum::Bool(false) => f.write_str("false"),
            Datum::Number(n) => write_number(f, *n),
            Datum::Symbol(s) => f.write_str(s),
            Datum::Str(s) => write_string(f, s),
            Datum::Procedure(name) => write!(f, "#<procedure {}>", name),
            Datum::Pair(_) => {
                f.write_str("(")?;
                let mut cur = self;
                let mut first = true;
                loop {
                    match cur {
                        Datum::Pair(p) => {
                            if !first {
                                f.write_str(" ")?;
                            }
                            first = false;
                            write!(f, "{}", p.0)?;
                            cur = &p.1;
                        }
                        Datum::Nil => break,
                        other => {
                            write!(f, " . {}", other)?;
                            break;
                        }
                    }
                }
                f.write_str(")")
            }
        }
    }
}

impl From<bool> for Datum {
    fn from(b: bool) -> Self {
        Datum::Bool(b)
    }
}

impl From<f64> for Datum {
    fn from(n: f64) -> Self {
        Datum::Number(n)
    }
}
