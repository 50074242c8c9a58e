//! Properties of the bundled world models that hold in every sampled world.

use mentalese_core::eval::EvalConfig;
use mentalese_core::infer::{derive_chain_seed, Program, Sampler};
use mentalese_core::sexpr::{parse, parse_one, print, SExpr};
use mentalese_core::value::Datum;
use mentalese_core::worlds::{construct_example_text, list_worlds, load_world, WorldModel};

fn sampler(model: Vec<SExpr>) -> Sampler {
    Sampler::new(&Program { model, conditions: Vec::new(), query: None }, EvalConfig::default()).expect("model compiles")
}

/// Values of `exprs` in the world drawn from `seed`.
fn probe(model: &[SExpr], seed: u64, exprs: &[&str]) -> Vec<Datum> {
    let mut s = sampler(model.to_vec());
    s.load_world(seed).expect("world loads");
    exprs.iter().map(|e| s.eval_in_world(&parse_one(e).unwrap()).unwrap_or_else(|err| panic!("{}: {}", e, err))).collect()
}

fn number(d: &Datum) -> f64 {
    d.as_number().expect("a number")
}

/// The model with one piece of its source text replaced.
fn variant(w: &WorldModel, from: &str, to: &str) -> Vec<SExpr> {
    assert!(w.model.source.contains(from), "{} no longer contains `{}`", w.id, from);
    let model = parse(&w.model.source.replace(from, to)).expect("variant parses");
    w.prelude.forms.iter().cloned().chain(model.forms).collect()
}

fn reprints(forms: &[SExpr], what: &str) {
    let text: Vec<String> = forms.iter().map(print).collect();
    let back = parse(&text.join("\n")).unwrap_or_else(|e| panic!("{} reprint does not parse: {}", what, e));
    assert_eq!(back.forms, forms, "{}", what);
}

#[test]
fn sources_reprint_to_the_same_trees() {
    for id in list_worlds() {
        let w = load_world(id).unwrap();
        assert!(!w.model.forms.is_empty(), "{}", id);
        reprints(&w.prelude.forms, &format!("{} prelude", id));
        reprints(&w.model.forms, &format!("{} model", id));
        reprints(&w.examples.forms, &format!("{} examples", id));
    }
    reprints(&parse(construct_example_text()).unwrap().forms, "construct example");
}

/// What to read out of a world: its render root, or for the tug-of-war
/// world a few draws and a match.
fn observation(w: &WorldModel) -> String {
    match &w.root_expr {
        Some(root) => print(root),
        None => "(list (strength 'josh) (laziness 'gabe) (won-against '(josh) '(gabe)))".to_string(),
    }
}

#[test]
fn equal_seeds_give_equal_worlds() {
    for id in list_worlds() {
        let w = load_world(id).unwrap();
        let expr = observation(&w);
        let forms = w.forms();
        let states: Vec<Datum> = (0..20).map(|i| probe(&forms, derive_chain_seed(3, 0, i), &[&expr]).remove(0)).collect();
        for (i, state) in states.iter().enumerate() {
            assert_eq!(&probe(&forms, derive_chain_seed(3, 0, i as u32), &[&expr])[0], state, "{} seed {}", id, i);
        }
        let distinct: std::collections::BTreeSet<String> = states.iter().map(|s| s.to_string()).collect();
        assert!(distinct.len() > 1, "{}: every seed gave the same world", id);
    }
}

/// Strength is memoized within a world and redrawn across worlds: the
/// per-world values fall into the quartiles of N(50, 20) evenly.
#[test]
fn strength_is_redrawn_per_world() {
    let w = load_world("tug-of-war").unwrap();
    let forms = w.forms();
    // Upper quartile point of the standard normal.
    let q = 0.674_489_750_196_081_7 * 20.0;
    let edges = [50.0 - q, 50.0, 50.0 + q];
    let worlds = 1000;
    let mut counts = [0usize; 4];
    for i in 0..worlds {
        let v = probe(&forms, derive_chain_seed(8, 0, i), &["(strength 'josh)", "(strength 'josh)"]);
        assert_eq!(v[0], v[1]);
        counts[edges.iter().filter(|e| number(&v[0]) > **e).count()] += 1;
    }
    let expected = worlds as f64 / 4.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 0.1% critical value with three degrees of freedom.
    assert!(chi2 < 16.27, "chi-square {} for {:?}", chi2, counts);
}

#[test]
fn lazy_players_pull_half_their_strength() {
    let w = load_world("tug-of-war").unwrap();
    let probes = ["(strength 'josh)", "(strength 'gabe)", "(team-strength '(josh gabe))", "(won-against '(josh) '(josh))"];
    for (laziness, factor) in [("1", 0.5), ("0", 1.0)] {
        let model = variant(&w, "(uniform 0 1)", laziness);
        for i in 0..50 {
            let v = probe(&model, derive_chain_seed(9, 0, i), &probes);
            let want = number(&v[0]) * factor + number(&v[1]) * factor;
            assert!((number(&v[2]) - want).abs() <= 1e-12 * want.abs().max(1.0), "laziness {}: {} vs {}", laziness, v[2], want);
            // A team never beats its equal: the comparison is strict.
            assert_eq!(v[3], Datum::Bool(false));
        }
    }
}

#[test]
fn lawn_travel_costs() {
    let w = load_world("agents").unwrap();
    let v = probe(&w.forms(), 1, &["(motion_utility 'bob 'lawn 'is_biking)", "(motion_utility 'bob 'lawn 'is_walking)"]);
    assert_eq!((number(&v[0]), number(&v[1])), (-1.0, -0.2));
}

/// The generator adds one object past its drawn count, so a scene holds
/// between 1 and 13 objects and 13 is common.
#[test]
fn static_scene_sizes() {
    let w = load_world("scenes-static").unwrap();
    let forms = w.forms();
    let root = print(w.root_expr.as_ref().unwrap());
    let sizes: Vec<usize> = (0..200).map(|i| probe(&forms, derive_chain_seed(10, 0, i), &[&root])[0].list_items().unwrap().len()).collect();
    assert!(sizes.iter().all(|n| (1..=13).contains(n)), "{:?}", sizes);
    assert!(sizes.contains(&13));
}
