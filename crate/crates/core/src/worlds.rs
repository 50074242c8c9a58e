//! The bundled world models.
//!
//! Each world is a model source, an example-translations source used in
//! prompts, optional shared helpers (the prelude), and mock translation
//! fixtures. Sources are embedded at compile time.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::EvalConfig;
use crate::infer::{defined_name, derive_chain_seed, Program, Sampler, StagedError};
use crate::sexpr::{parse, parse_one, ParseError, SExpr, SourceUnit};
use crate::value::Datum;

const PRELUDE: &str = include_str!("../assets/worlds/prelude.church");
const CONSTRUCT_EXAMPLE: &str = include_str!("../assets/worlds/construct-example.church");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RenderKind {
    None,
    TableScene,
    FrameSequence,
    FamilyTree,
    Gridworld,
}

struct Asset {
    id: &'static str,
    title: &'static str,
    model: &'static str,
    examples: &'static str,
    fixtures: &'static str,
    uses_prelude: bool,
    render: RenderKind,
    root: Option<&'static str>,
}

const ASSETS: &[Asset] = &[
    Asset {
        id: "tug-of-war",
        title: "Tug-of-war tournament",
        model: include_str!("../assets/worlds/tug-of-war.church"),
        examples: include_str!("../assets/worlds/tug-of-war.examples.church"),
        fixtures: include_str!("../assets/fixtures/tug-of-war.church"),
        uses_prelude: false,
        render: RenderKind::None,
        root: None,
    },
    Asset {
        id: "kinship",
        title: "Family trees",
        model: include_str!("../assets/worlds/kinship.church"),
        examples: include_str!("../assets/worlds/kinship.examples.church"),
        fixtures: include_str!("../assets/fixtures/kinship.church"),
        uses_prelude: false,
        render: RenderKind::FamilyTree,
        root: Some("T"),
    },
    Asset {
        id: "scenes-static",
        title: "Tabletop scenes",
        model: include_str!("../assets/worlds/scenes-static.church"),
        examples: include_str!("../assets/worlds/scenes-static.examples.church"),
        fixtures: include_str!("../assets/fixtures/scenes-static.church"),
        uses_prelude: false,
        render: RenderKind::TableScene,
        root: Some("(objects-in-scene 'scene)"),
    },
    Asset {
        id: "scenes-physics",
        title: "Physical scenes",
        model: include_str!("../assets/worlds/scenes-physics.church"),
        examples: include_str!("../assets/worlds/scenes-physics.examples.church"),
        fixtures: include_str!("../assets/fixtures/scenes-physics.church"),
        uses_prelude: true,
        render: RenderKind::FrameSequence,
        root: Some("base_states_for_times"),
    },
    Asset {
        id: "agents",
        title: "Agents and restaurants",
        model: include_str!("../assets/worlds/agents.church"),
        examples: include_str!("../assets/worlds/agents.examples.church"),
        fixtures: include_str!("../assets/fixtures/agents.church"),
        uses_prelude: true,
        render: RenderKind::Gridworld,
        root: Some("(optimal_policy_with_trajectory 'bob gridworld initial_x initial_y)"),
    },
    Asset {
        id: SCRATCH_WORLD,
        title: "Empty model for construction from scratch",
        model: "",
        examples: "",
        fixtures: include_str!("../assets/fixtures/scratch.church"),
        uses_prelude: false,
        render: RenderKind::None,
        root: None,
    },
];

/// World id of the empty model that construct-mode sessions start from.
/// Not part of [`list_worlds`].
pub const SCRATCH_WORLD: &str = "scratch";

#[derive(Clone, Debug, PartialEq, Error)]
pub enum WorldError {
    #[error("unknown world `{0}`")]
    Unknown(String),
    #[error("world `{world}` asset `{asset}` failed to parse: {error}")]
    Asset { world: String, asset: &'static str, error: ParseError },
    #[error("world `{world}` failed to evaluate: {error}")]
    Evaluation { world: String, error: StagedError },
}

#[derive(Clone, Debug)]
pub struct WorldModel {
    pub id: &'static str,
    pub title: &'static str,
    pub prelude: SourceUnit,
    pub model: SourceUnit,
    pub examples: SourceUnit,
    pub render_kind: RenderKind,
    pub root_expr: Option<SExpr>,
    /// Mock translation fixtures in `;; Tag: text` form.
    pub fixtures: &'static str,
}

impl WorldModel {
    /// Prelude forms followed by model forms.
    pub fn forms(&self) -> Vec<SExpr> {
        self.prelude.forms.iter().chain(&self.model.forms).cloned().collect()
    }

    /// Verbatim model text for prompts, prelude first.
    pub fn model_text(&self) -> String {
        if self.prelude.source.is_empty() {
            self.model.source.clone()
        } else {
            format!("{}{}", self.prelude.source, self.model.source)
        }
    }

    pub fn examples_text(&self) -> &str {
        &self.examples.source
    }

    /// Names bound by top-level defines of the prelude and model.
    pub fn defined_names(&self) -> Vec<String> {
        self.forms().iter().filter_map(defined_name).map(ToString::to_string).collect()
    }

    pub fn program(&self) -> Program {
        Program { model: self.forms(), ..Program::default() }
    }

    pub fn is_construct(&self) -> bool {
        self.id == SCRATCH_WORLD
    }
}

/// The unrelated example world shown in construct-mode prompts.
pub fn construct_example_text() -> &'static str {
    CONSTRUCT_EXAMPLE
}

/// The five bundled world ids, in a fixed order.
pub fn list_worlds() -> Vec<&'static str> {
    ASSETS.iter().map(|a| a.id).filter(|id| *id != SCRATCH_WORLD).collect()
}

pub fn world_title(id: &str) -> Option<&'static str> {
    ASSETS.iter().find(|a| a.id == id).map(|a| a.title)
}

/// Parses a world's assets. Does not evaluate anything; see
/// [`dry_run_world`].
pub fn load_world(id: &str) -> Result<WorldModel, WorldError> {
    let asset = ASSETS.iter().find(|a| a.id == id).ok_or_else(|| WorldError::Unknown(id.to_string()))?;
    let parse_asset = |name: &'static str, text: &str| parse(text).map_err(|error| WorldError::Asset { world: id.to_string(), asset: name, error });
    let prelude = if asset.uses_prelude { parse_asset("prelude", PRELUDE)? } else { parse_asset("prelude", "")? };
    let model = parse_asset("model", asset.model)?;
    let examples = parse_asset("examples", asset.examples)?;
    let root_expr = match asset.root {
        Some(r) => Some(parse_one(r).map_err(|error| WorldError::Asset { world: id.to_string(), asset: "root", error })?),
        None => None,
    };
    Ok(WorldModel {
        id: asset.id,
        title: asset.title,
        prelude,
        model,
        examples,
        render_kind: asset.render,
        root_expr,
        fixtures: asset.fixtures,
    })
}

/// Evaluates the world model in `n` seeded worlds.
pub fn dry_run_world(world: &WorldModel, n: u32, seed: u64) -> Result<(), WorldError> {
    let mut sampler = Sampler::new(&world.program(), EvalConfig::default()).map_err(|error| WorldError::Evaluation { world: world.id.to_string(), error })?;
    for i in 0..n {
        sampler.load_world(derive_chain_seed(seed, 0, i)).map_err(|error| WorldError::Evaluation { world: world.id.to_string(), error })?;
    }
    Ok(())
}

/// Seed of the `k`-th prior sample of a world.
pub fn world_sample_seed(seed: u64, k: u32) -> u64 {
    derive_chain_seed(seed, u32::MAX - 1, k)
}

/// Evaluates the world's root expression in a fresh world.
pub fn sample_world_state(world: &WorldModel, seed: u64) -> Result<Datum, WorldError> {
    let mut sampler = Sampler::new(&world.program(), EvalConfig::default()).map_err(|error| WorldError::Evaluation { world: world.id.to_string(), error })?;
    sample_with(&mut sampler, world, seed)
}

pub(crate) fn sample_with(sampler: &mut Sampler, world: &WorldModel, seed: u64) -> Result<Datum, WorldError> {
    let err = |error| WorldError::Evaluation { world: world.id.to_string(), error };
    sampler.load_world(seed).map_err(err)?;
    match &world.root_expr {
        Some(root) => sampler
            .eval_in_world(root)
            .map_err(|error| err(StagedError { stage: crate::infer::Stage::Query, error })),
        None => Ok(Datum::Nil),
    }
}

// -------------------------------------------------------------------
// prior statistics
// -------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatCheck {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub n: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatisticsReport {
    pub world: String,
    pub seeds: u32,
    pub checks: Vec<StatCheck>,
}

impl StatisticsReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Tolerance of four standard errors for a mean of `n` draws with standard
/// deviation `sd`.
fn four_se(sd: f64, n: usize) -> f64 {
    4.0 * sd / libm::sqrt(n as f64)
}

fn mean_check(name: &str, xs: &[f64], expected: f64, sd: f64) -> StatCheck {
    let n = xs.len();
    let observed = xs.iter().sum::<f64>() / n.max(1) as f64;
    let tolerance = four_se(sd, n);
    StatCheck { name: name.to_string(), observed, expected, tolerance, n, passed: (observed - expected).abs() <= tolerance }
}

fn bound_check(name: &str, observed: f64, bound: f64, n: usize) -> StatCheck {
    StatCheck { name: name.to_string(), observed, expected: bound, tolerance: 0.0, n, passed: observed <= bound }
}

/// Mean of |X| for X ~ N(mu, sigma).
pub fn folded_normal_mean(mu: f64, sigma: f64) -> f64 {
    let z = mu / sigma;
    sigma * libm::sqrt(2.0 / core::f64::consts::PI) * libm::exp(-z * z / 2.0) + mu * libm::erf(z / core::f64::consts::SQRT_2)
}

/// Second moment of |X| for X ~ N(mu, sigma), used for its variance.
fn folded_normal_sd(mu: f64, sigma: f64) -> f64 {
    let m = folded_normal_mean(mu, sigma);
    libm::sqrt(mu * mu + sigma * sigma - m * m)
}

/// Compares prior statistics of a world against analytic values over `n`
/// seeded worlds.
pub fn check_world_statistics(world: &WorldModel, n: u32, seed: u64) -> Result<StatisticsReport, WorldError> {
    let probe = |exprs: &[&str]| -> Result<Vec<Vec<Datum>>, WorldError> {
        let program = world.program();
        let mut sampler = Sampler::new(&program, EvalConfig::default()).map_err(|error| WorldError::Evaluation { world: world.id.to_string(), error })?;
        let parsed: Vec<SExpr> = exprs.iter().map(|e| parse_one(e).expect("probe expressions are well formed")).collect();
        let mut rows = Vec::with_capacity(n as usize);
        for i in 0..n {
            sampler.load_world(derive_chain_seed(seed, 1, i)).map_err(|error| WorldError::Evaluation { world: world.id.to_string(), error })?;
            let mut row = Vec::with_capacity(parsed.len());
            for e in &parsed {
                let v = sampler
                    .eval_in_world(e)
                    .map_err(|error| WorldError::Evaluation { world: world.id.to_string(), error: StagedError { stage: crate::infer::Stage::Query, error } })?;
                row.push(v);
            }
            rows.push(row);
        }
        Ok(rows)
    };
    let numbers = |rows: &[Vec<Datum>], col: usize| -> Vec<f64> { rows.iter().filter_map(|r| r[col].as_number()).collect() };
    let flags = |rows: &[Vec<Datum>], col: usize| -> Vec<f64> { rows.iter().map(|r| if r[col] == Datum::Bool(true) { 1.0 } else { 0.0 }).collect() };

    let mut checks = Vec::new();
    match world.id {
        "tug-of-war" => {
            let players = ["alice", "bob", "josh", "lio", "alex", "gabe", "tom", "sue", "mary", "john"];
            let exprs: Vec<String> = players.iter().map(|p| format!("(strength '{})", p)).collect();
            let laziness: Vec<String> = players.iter().map(|p| format!("(laziness '{})", p)).collect();
            let all: Vec<&str> = exprs.iter().chain(&laziness).map(String::as_str).collect();
            let rows = probe(&all)?;
            let strengths: Vec<f64> = (0..players.len()).flat_map(|c| numbers(&rows, c)).collect();
            let lazy: Vec<f64> = (players.len()..2 * players.len()).flat_map(|c| numbers(&rows, c)).collect();
            checks.push(mean_check("mean strength", &strengths, 50.0, 20.0));
            checks.push(mean_check("mean laziness", &lazy, 0.5, libm::sqrt(1.0 / 12.0)));
            let wins = probe(&["(won-against '(a) '(b))"])?;
            checks.push(mean_check("P(a beats b)", &flags(&wins, 0), 0.5, 0.5));
        }
        "kinship" => {
            let rows = probe(&["(length T)", "(if (null? (lookup (first T) 'partner-id)) false true)"])?;
            let sizes = numbers(&rows, 0);
            let max = sizes.iter().copied().fold(0.0, f64::max);
            checks.push(bound_check("max tree size", max, 27.0, sizes.len()));
            checks.push(mean_check("P(root partnered)", &flags(&rows, 1), 0.5, 0.5));
        }
        "scenes-static" => {
            let rows = probe(&["(length (objects-in-scene 'scene))", "(equal? (cdr (assoc 'shape (first (objects-in-scene 'scene)))) 'mug)"])?;
            let counts = numbers(&rows, 0);
            let max = counts.iter().copied().fold(0.0, f64::max);
            checks.push(bound_check("max object count", max, 13.0, counts.len()));
            let third = libm::sqrt(2.0 / 9.0);
            checks.push(mean_check("P(first object is a mug)", &flags(&rows, 1), 1.0 / 3.0, third));
        }
        "scenes-physics" => {
            let rows = probe(&["(get_attribute (first all_objects) 'initial_push_force)", "(get_attribute (first all_objects) 'mass)", "(eq? (get_attribute (first all_objects) 'shape) 'sphere)"])?;
            checks.push(mean_check("mean initial push", &numbers(&rows, 0), folded_normal_mean(5.0, 3.0), folded_normal_sd(5.0, 3.0)));
            checks.push(mean_check("mean mass", &numbers(&rows, 1), folded_normal_mean(5.0, 3.0), folded_normal_sd(5.0, 3.0)));
            checks.push(mean_check("P(sphere)", &flags(&rows, 2), 0.5, 0.5));
        }
        "agents" => {
            let rows = probe(&["(has_bike 'bob)", "(is_open 'sushi)"])?;
            checks.push(mean_check("P(has_bike)", &flags(&rows, 0), 0.5, 0.5));
            checks.push(mean_check("P(sushi open)", &flags(&rows, 1), 0.5, 0.5));
        }
        _ => {}
    }
    Ok(StatisticsReport { world: world.id.to_string(), seeds: n, checks })
}
