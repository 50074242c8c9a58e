//! Shared helpers for integration tests: world probes and independent
//! reimplementations of the physics and planning models as flat loops.

#![allow(dead_code)]

use mentalese::core::eval::EvalConfig;
use mentalese::core::infer::{derive_chain_seed, Program, Sampler};
use mentalese::core::sexpr::parse_one;
use mentalese::core::value::Datum;
use mentalese::core::worlds::{load_world, WorldModel};
use mentalese::parallel::on_eval_thread;

/// Master seed for the seeded-world suites.
pub const SUITE_SEED: u64 = 0x5EED;

pub fn suite_seed(i: u32) -> u64 {
    derive_chain_seed(SUITE_SEED, 7, i)
}

/// Evaluates `exprs` in order in one freshly seeded world of `model`.
pub fn probe_program(model: Vec<mentalese::core::SExpr>, seed: u64, exprs: &[&str]) -> Vec<Datum> {
    let program = Program { model, ..Program::default() };
    let mut sampler = Sampler::new(&program, EvalConfig::default()).expect("model compiles");
    sampler.load_world(seed).expect("model evaluates");
    exprs.iter().map(|e| sampler.eval_in_world(&parse_one(e).expect("probe parses")).unwrap_or_else(|err| panic!("{}: {}", e, err))).collect()
}

pub fn probe(world: &WorldModel, seed: u64, exprs: &[&str]) -> Vec<Datum> {
    probe_program(world.forms(), seed, exprs)
}

pub fn world(id: &str) -> WorldModel {
    load_world(id).expect("bundled world")
}

pub fn big_stack<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    on_eval_thread(f)
}

pub fn num(d: &Datum, key: &str) -> f64 {
    d.get(key).and_then(Datum::as_number).unwrap_or_else(|| panic!("no number `{}` in {}", key, d))
}

pub fn sym(d: &Datum, key: &str) -> String {
    match d.get(key) {
        Some(Datum::Symbol(s)) => s.clone(),
        other => panic!("no symbol `{}` in {}: {:?}", key, d, other),
    }
}

// -------------------------------------------------------------------
// physics
// -------------------------------------------------------------------

pub mod physics {
    pub const GRAVITY: f64 = 9.8;
    pub const DELTA_T: f64 = 0.5;
    pub const RADIUS: f64 = 1.0;
    pub const FRAMES: usize = 10;
    pub const START_X: [f64; 2] = [-3.0, 0.0];

    pub fn static_mu(shape: &str) -> f64 {
        if shape == "sphere" {
            0.02
        } else {
            0.05
        }
    }

    pub fn kinetic_mu(shape: &str) -> f64 {
        if shape == "sphere" {
            0.01
        } else {
            0.02
        }
    }

    fn friction_force(f: f64, v: f64, shape: &str, m: f64) -> f64 {
        let normal = m * GRAVITY;
        if v.abs() > 0.0 {
            f - kinetic_mu(shape) * normal
        } else if f < static_mu(shape) * normal {
            0.0
        } else {
            f - kinetic_mu(shape) * normal
        }
    }

    /// Velocity step that stops at zero instead of reversing.
    fn step_v(v: f64, a: f64) -> f64 {
        let next = v + a * DELTA_T;
        if v * next >= 0.0 {
            next
        } else {
            0.0
        }
    }

    pub fn elastic(m_s: f64, v_s: f64, m_o: f64, v_o: f64) -> f64 {
        (2.0 * (m_o * v_o) + v_s * (m_s - m_o)) / (m_s + m_o)
    }

    #[derive(Clone, Copy, Debug, PartialEq)]
    pub struct Body {
        pub x: f64,
        pub v: f64,
    }

    /// `(x, v)` of both objects for frames 0..10. Object 0 is pushed with
    /// `push`; object 1 starts at rest.
    pub fn simulate(shape: &str, mass: [f64; 2], push: f64) -> Vec<[Body; 2]> {
        let mut frames = Vec::with_capacity(FRAMES);
        let mut now = [0usize, 1].map(|i| {
            let p = if i == 0 { push } else { 0.0 };
            let f = friction_force(p, 0.0, shape, mass[i]);
            Body { x: START_X[i], v: step_v(0.0, f / mass[i]) }
        });
        frames.push(now);
        for _ in 1..FRAMES {
            let prev = now;
            let touching = (prev[0].x - prev[1].x).powi(2) <= (2.0 * RADIUS).powi(2);
            for i in 0..2 {
                let o = 1 - i;
                now[i] = if touching {
                    let v = elastic(mass[i], prev[i].v, mass[o], prev[o].v);
                    Body { x: prev[i].x + v * 1.0, v }
                } else {
                    let a = friction_force(0.0, prev[i].v, shape, mass[i]) / mass[i];
                    Body { x: prev[i].x + prev[i].v * DELTA_T, v: step_v(prev[i].v, a) }
                };
            }
            frames.push(now);
        }
        frames
    }
}

// -------------------------------------------------------------------
// planning
// -------------------------------------------------------------------

pub mod planner {
    pub const WIDTH: usize = 5;
    pub const HEIGHT: usize = 6;
    pub const ITERATIONS: usize = 20;
    pub const START: (usize, usize) = (1, 3);

    pub const GRID: [[&str; WIDTH]; HEIGHT] = [
        ["ames", "lawn", "lawn", "lawn", "sushi"],
        ["ames", "lawn", "lawn", "lawn", "danner"],
        ["office", "barlow", "barlow", "barlow", "danner"],
        ["ames", "lawn", "lawn", "lawn", "danner"],
        ["ames", "lawn", "lawn", "lawn", "vegetarian"],
        ["pizza", "carson", "carson", "carson", "danner"],
    ];

    pub const RESTAURANTS: [&str; 3] = ["sushi", "pizza", "vegetarian"];

    /// Action order of the model: stay, then motions crossed with
    /// directions as its `cartesian_product` enumerates them.
    pub fn actions(has_bike: bool) -> Vec<(&'static str, &'static str)> {
        let mut out = vec![("stay", "stay")];
        let motions: &[&str] = if has_bike { &["is_biking", "is_walking"] } else { &["is_walking"] };
        for m in motions {
            for d in ["south", "north", "east", "west"] {
                out.push((m, d));
            }
        }
        out
    }

    pub struct Agent {
        pub has_bike: bool,
        /// Food utility per restaurant, -10 for a closed one.
        pub food: [f64; 3],
    }

    /// 1-indexed cell lookup.
    pub fn cell(x: usize, y: usize) -> &'static str {
        GRID[y - 1][x - 1]
    }

    impl Agent {
        pub fn food_at(&self, x: usize, y: usize) -> f64 {
            match RESTAURANTS.iter().position(|r| *r == cell(x, y)) {
                Some(i) => self.food[i],
                None => 0.0,
            }
        }

        fn motion(&self, x: usize, y: usize, motion: &str) -> f64 {
            match (cell(x, y) == "lawn", motion) {
                (true, "is_biking") => -1.0,
                (false, "is_biking") => -0.01,
                (_, "is_walking") => -0.2,
                _ => 0.0,
            }
        }

        pub fn utility(&self, x: usize, y: usize, motion: &str) -> f64 {
            self.food_at(x, y) + self.motion(x, y, motion)
        }
    }

    /// The model's move rule: a coordinate already at its maximum does not
    /// change, and moves below 1 are blocked.
    pub fn step(x: usize, y: usize, dir: &str) -> (usize, usize) {
        let (dx, dy): (i64, i64) = match dir {
            "west" => (-1, 0),
            "east" => (1, 0),
            "north" => (0, -1),
            "south" => (0, 1),
            _ => (0, 0),
        };
        let mut nx = if x >= WIDTH { x as i64 } else { x as i64 + dx };
        if nx < 1 {
            nx = x as i64;
        }
        let mut ny = if y >= HEIGHT { y as i64 } else { y as i64 + dy };
        if ny < 1 {
            ny = y as i64;
        }
        (nx as usize, ny as usize)
    }

    pub type Table = [[f64; WIDTH]; HEIGHT];

    /// `values[i]` is the value after `i + 1` backups from zero; the model
    /// calls it the value function at iteration `i`.
    pub fn value_iteration(agent: &Agent) -> Vec<Table> {
        let acts = actions(agent.has_bike);
        let mut prev: Table = [[0.0; WIDTH]; HEIGHT];
        let mut out = Vec::with_capacity(ITERATIONS + 1);
        for _ in 0..=ITERATIONS {
            let mut next: Table = [[0.0; WIDTH]; HEIGHT];
            for y in 1..=HEIGHT {
                for x in 1..=WIDTH {
                    let mut best = f64::NEG_INFINITY;
                    for (m, d) in &acts {
                        let (nx, ny) = step(x, y, d);
                        let q = agent.utility(x, y, m) + prev[ny - 1][nx - 1];
                        if q > best {
                            best = q;
                        }
                    }
                    next[y - 1][x - 1] = best;
                }
            }
            out.push(next);
            prev = next;
        }
        out
    }

    /// Greedy policy against the final value table, first action winning
    /// ties; each step is `((motion, direction), location after the move)`.
    /// `None` if the walk does not terminate within `limit` steps.
    pub fn policy(agent: &Agent, limit: usize) -> Option<Vec<((&'static str, &'static str), &'static str)>> {
        let values = value_iteration(agent);
        let last = &values[ITERATIONS];
        let acts = actions(agent.has_bike);
        let (mut x, mut y) = START;
        let start_value = last[START.1 - 1][START.0 - 1];
        let mut out = Vec::new();
        for _ in 0..limit {
            if start_value <= 0.0 || agent.food_at(x, y) > 0.0 {
                return Some(out);
            }
            let mut best: Option<(f64, (&str, &str))> = None;
            for &(m, d) in &acts {
                let (nx, ny) = step(x, y, d);
                let q = agent.utility(x, y, m) + last[ny - 1][nx - 1];
                if best.is_none_or(|(b, _)| q > b) {
                    best = Some((q, (m, d)));
                }
            }
            let (_, action) = best.expect("at least one action");
            let (nx, ny) = step(x, y, action.1);
            out.push((action, cell(nx, ny)));
            x = nx;
            y = ny;
        }
        None
    }
}

// -------------------------------------------------------------------
// scripted dialogues
// -------------------------------------------------------------------

pub fn dialogue_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("dialogues").join(format!("{}.dialogue.json", name))
}

pub fn load_script(name: &str) -> mentalese::cli::Script {
    let text = std::fs::read_to_string(dialogue_path(name)).expect("bundled dialogue");
    serde_json::from_str(&text).expect("dialogue parses")
}

/// Plays a bundled dialogue against the mock backend without persistence.
/// Stops at the first entry that did not commit.
pub fn play(name: &str) -> mentalese::dialogue::Dialogue {
    use mentalese::backend::BackendConfig;
    use mentalese::dialogue::{Dialogue, DialogueSettings};
    let script = load_script(name);
    let backend = BackendConfig::default().build(&world(&script.world)).expect("mock backend");
    let mut dialogue = Dialogue::create(&script.world, format!("test-{}", name), "1970-01-01T00:00:00Z".into(), script.seed, script.budget.unwrap_or_default(), backend, DialogueSettings::default()).expect("dialogue opens");
    for input in script.utterances {
        let entry = dialogue.step(input).expect("step succeeds");
        if !entry.is_committed() {
            break;
        }
    }
    dialogue
}

pub fn posterior(entry: &mentalese::record::UtteranceEntry) -> &mentalese::core::infer::PosteriorSummary {
    match &entry.result {
        mentalese::record::EntryResult::Posterior { summary, .. } => summary,
        other => panic!("entry {} has no posterior: {:?}", entry.index, other),
    }
}
