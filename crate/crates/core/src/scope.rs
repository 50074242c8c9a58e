//! Static free-symbol analysis over surface syntax.
//!
//! Mirrors the binding rules of the evaluator closely enough to reject
//! translations that mention names no definition provides, before any
//! world is sampled.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::sexpr::{SExpr, SExprKind};

/// Symbols whose meaning comes from the surrounding program text rather
/// than from a binding: form heads and clause keywords.
pub const FORM_KEYWORDS: &[&str] = &["condition", "query", "else", "."];

struct Scopes<'a> {
    frames: Vec<Vec<&'a str>>,
}

impl<'a> Scopes<'a> {
    fn bound(&self, name: &str) -> bool {
        self.frames.iter().any(|f| f.contains(&name))
    }

    fn push(&mut self, names: Vec<&'a str>) {
        self.frames.push(names);
    }

    fn pop(&mut self) {
        self.frames.pop();
    }
}

/// Free symbols of `forms`, in first-occurrence order, given a predicate
/// for names bound by the environment. Top-level defines among `forms`
/// bind for every form, so a definition may be used before it appears.
pub fn free_symbols(forms: &[SExpr], is_bound: &dyn Fn(&str) -> bool) -> Vec<String> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut scopes = Scopes { frames: Vec::new() };
    scopes.push(body_defines(forms));
    for form in forms {
        walk(form, &mut scopes, is_bound, &mut out, &mut seen);
    }
    out
}

fn body_defines(body: &[SExpr]) -> Vec<&str> {
    body.iter().filter_map(crate::infer::defined_name).collect()
}

fn param_names(params: &SExpr) -> Vec<&str> {
    match &params.kind {
        SExprKind::Symbol(s) => alloc::vec![s.as_str()],
        SExprKind::List(items) => items.iter().filter_map(SExpr::as_symbol).filter(|s| *s != ".").collect(),
        _ => Vec::new(),
    }
}

fn walk<'a>(expr: &'a SExpr, scopes: &mut Scopes<'a>, is_bound: &dyn Fn(&str) -> bool, out: &mut Vec<String>, seen: &mut BTreeSet<String>) {
    match &expr.kind {
        SExprKind::Symbol(name) => {
            if !scopes.bound(name) && !is_bound(name) && !FORM_KEYWORDS.contains(&name.as_str()) && seen.insert(name.clone()) {
                out.push(name.to_string());
            }
        }
        SExprKind::List(items) => {
            let Some(head) = items.first() else { return };
            match head.as_symbol() {
                Some("quote") => {}
                Some("lambda") if items.len() >= 2 => lambda(&items[1], &items[2..], scopes, is_bound, out, seen),
                Some("define") if items.len() >= 2 => match &items[1].kind {
                    SExprKind::List(sig) if !sig.is_empty() => {
                        let names = sig[1..].iter().filter_map(SExpr::as_symbol).filter(|s| *s != ".").collect();
                        scopes.push(names);
                        body(&items[2..], scopes, is_bound, out, seen);
                        scopes.pop();
                    }
                    _ => {
                        for e in &items[2..] {
                            walk(e, scopes, is_bound, out, seen);
                        }
                    }
                },
                Some("let") | Some("let*") if items.len() >= 2 => {
                    let sequential = head.as_symbol() == Some("let*");
                    let bindings = items[1].as_list().unwrap_or(&[]);
                    let mut names = Vec::new();
                    if sequential {
                        scopes.push(Vec::new());
                    }
                    for b in bindings {
                        let pair = b.as_list().unwrap_or(&[]);
                        if let Some(init) = pair.get(1) {
                            walk(init, scopes, is_bound, out, seen);
                        }
                        if let Some(name) = pair.first().and_then(SExpr::as_symbol) {
                            if sequential {
                                if let Some(f) = scopes.frames.last_mut() {
                                    f.push(name);
                                }
                            } else {
                                names.push(name);
                            }
                        }
                    }
                    if !sequential {
                        scopes.push(names);
                    }
                    body(&items[2..], scopes, is_bound, out, seen);
                    scopes.pop();
                }
                Some("case") if items.len() >= 2 => {
                    walk(&items[1], scopes, is_bound, out, seen);
                    for clause in &items[2..] {
                        if let Some(parts) = clause.as_list() {
                            for e in parts.iter().skip(1) {
                                walk(e, scopes, is_bound, out, seen);
                            }
                        }
                    }
                }
                Some("cond") => {
                    for clause in &items[1..] {
                        if let Some(parts) = clause.as_list() {
                            for e in parts {
                                walk(e, scopes, is_bound, out, seen);
                            }
                        }
                    }
                }
                _ => {
                    for e in items {
                        walk(e, scopes, is_bound, out, seen);
                    }
                }
            }
        }
        _ => {}
    }
}

fn lambda<'a>(params: &'a SExpr, rest: &'a [SExpr], scopes: &mut Scopes<'a>, is_bound: &dyn Fn(&str) -> bool, out: &mut Vec<String>, seen: &mut BTreeSet<String>) {
    scopes.push(param_names(params));
    body(rest, scopes, is_bound, out, seen);
    scopes.pop();
}

/// A lambda or define body: internal defines bind across the whole body.
fn body<'a>(forms: &'a [SExpr], scopes: &mut Scopes<'a>, is_bound: &dyn Fn(&str) -> bool, out: &mut Vec<String>, seen: &mut BTreeSet<String>) {
    scopes.push(body_defines(forms));
    for f in forms {
        walk(f, scopes, is_bound, out, seen);
    }
    scopes.pop();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sexpr::parse;

    fn free(text: &str) -> Vec<String> {
        let unit = parse(text).unwrap();
        free_symbols(&unit.forms, &|n| crate::builtins::is_builtin(n) || crate::eval::SPECIAL_FORMS.contains(&n))
    }

    #[test]
    fn lambda_and_let_bind() {
        assert!(free("((lambda (x) (* x y)) 3)") == ["y"]);
        assert!(free("(let ((a 1) (b a)) (+ a b c))") == ["a", "c"]);
        assert!(free("(let* ((a 1) (b a)) (+ a b))").is_empty());
        assert!(free("(lambda args (length args))").is_empty());
        assert!(free("(lambda (a . more) (cons a more))").is_empty());
    }

    #[test]
    fn defines_bind_everywhere_at_their_level() {
        assert!(free("(define (f x) (g x)) (define (g y) (f y))").is_empty());
        assert!(free("(define (f x) (define (h) x) (h))").is_empty());
        assert!(free("(condition (beats '(a) '(b)))") == ["beats"]);
    }

    #[test]
    fn quoted_data_and_clause_keywords_are_not_references() {
        assert!(free("(case 'lawn (('lawn) 7) (else 0))").is_empty());
        assert!(free("(cond ((> 1 0) 'yes) (else missing))") == ["missing"]);
        assert!(free("(quote (anything at all))").is_empty());
    }
}
