//! Schematic rendering of sampled world states.
//!
//! A state is first laid out as a [`SceneDescription`] in abstract units,
//! then drawn as SVG at [`UNIT`] pixels per unit. Both steps are
//! deterministic, so equal states give byte-identical output.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::EvalConfig;
use crate::infer::{Program, Sampler};
use crate::sexpr::{format_number, parse_one};
use crate::value::Datum;
use crate::worlds::{RenderKind, WorldModel};

/// Pixels per layout unit.
pub const UNIT: f64 = 40.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Glyph {
    Mug,
    Can,
    Bowl,
    Sphere,
    Block,
    Person,
    Cell,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub glyph: Glyph,
    pub color: [u8; 3],
    pub geometry: Geometry,
    pub labels: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeKind {
    Parent,
    Partner,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arrow {
    pub from: (f64, f64),
    pub to: (f64, f64),
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub kind: RenderKind,
    pub width: f64,
    pub height: f64,
    pub entities: Vec<Entity>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<SceneDescription>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<Edge>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overlay: Vec<Arrow>,
    /// Frame time, for physics frames.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
}

impl SceneDescription {
    fn new(kind: RenderKind, width: f64, height: f64) -> Self {
        SceneDescription { kind, width, height, entities: Vec::new(), frames: Vec::new(), edges: Vec::new(), overlay: Vec::new(), time: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rendered {
    pub description: SceneDescription,
    pub svg: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("world `{0}` has nothing to render")]
    NotRenderable(String),
    #[error("unexpected state shape: {0}")]
    Shape(String),
}

fn shape_err(what: &str, datum: &Datum) -> RenderError {
    let mut text = datum.to_string();
    if text.len() > 120 {
        let cut = (0..=120).rev().find(|i| text.is_char_boundary(*i)).unwrap_or(0);
        text.truncate(cut);
        text.push_str("...");
    }
    RenderError::Shape(format!("{} in {}", what, text))
}

fn items<'d>(datum: &'d Datum, what: &str) -> Result<Vec<&'d Datum>, RenderError> {
    datum.list_items().ok_or_else(|| shape_err(what, datum))
}

fn field<'d>(record: &'d Datum, key: &str) -> Result<&'d Datum, RenderError> {
    record.get(key).ok_or_else(|| shape_err(&format!("missing `{}`", key), record))
}

fn number(record: &Datum, key: &str) -> Result<f64, RenderError> {
    field(record, key)?.as_number().ok_or_else(|| shape_err(&format!("`{}` is not a number", key), record))
}

fn color(record: &Datum) -> Result<[u8; 3], RenderError> {
    let c = field(record, "color")?;
    let parts = items(c, "color is not a list")?;
    let channel = |d: &Datum| d.as_number().filter(|n| (0.0..=255.0).contains(n)).map(|n| n as u8);
    match parts.as_slice() {
        [r, g, b] => match (channel(r), channel(g), channel(b)) {
            (Some(r), Some(g), Some(b)) => Ok([r, g, b]),
            _ => Err(shape_err("color channels must be 0..=255", c)),
        },
        _ => Err(shape_err("color needs three channels", c)),
    }
}

fn text_of(d: &Datum) -> String {
    match d {
        Datum::Symbol(s) | Datum::Str(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Lays out and draws `state`, as produced by `sample_world_state` for
/// `world`.
pub fn render_scene(state: &Datum, world: &WorldModel) -> Result<Rendered, RenderError> {
    let description = match world.render_kind {
        RenderKind::None => return Err(RenderError::NotRenderable(world.id.to_string())),
        RenderKind::TableScene => table_scene(state)?,
        RenderKind::FrameSequence => frame_sequence(state)?,
        RenderKind::FamilyTree => family_tree(state)?,
        RenderKind::Gridworld => gridworld(state, world)?,
    };
    let svg = to_svg(&description);
    Ok(Rendered { description, svg })
}

// -------------------------------------------------------------------
// layouts
// -------------------------------------------------------------------

const TABLE_Y: f64 = 2.0;
const OBJECT_SPACING: f64 = 1.5;

fn table_scene(state: &Datum) -> Result<SceneDescription, RenderError> {
    let objects = items(state, "scene is not a list of objects")?;
    let width = OBJECT_SPACING * objects.len() as f64 + 1.0;
    let mut scene = SceneDescription::new(RenderKind::TableScene, width.max(4.0), 3.0);
    for (i, obj) in objects.iter().enumerate() {
        let shape = text_of(field(obj, "shape")?);
        let glyph = match shape.as_str() {
            "mug" => Glyph::Mug,
            "can" => Glyph::Can,
            "bowl" => Glyph::Bowl,
            _ => return Err(shape_err("unknown shape", obj)),
        };
        let height = match glyph {
            Glyph::Bowl => 0.6,
            Glyph::Can => 1.2,
            _ => 1.0,
        };
        scene.entities.push(Entity {
            id: text_of(field(obj, "object-id")?),
            glyph,
            color: color(obj)?,
            geometry: Geometry { x: 0.75 + OBJECT_SPACING * i as f64, y: TABLE_Y - height, width: 1.0, height },
            labels: alloc::vec![shape],
        });
    }
    Ok(scene)
}

const TRACK_MIN_X: f64 = -6.0;
const TRACK_MAX_X: f64 = 14.0;

fn frame_sequence(state: &Datum) -> Result<SceneDescription, RenderError> {
    let mut frames = Vec::new();
    for entry in items(state, "frames are not a list")? {
        let time = entry.car().and_then(Datum::as_number).ok_or_else(|| shape_err("frame without a time", entry))?;
        let body = entry.cdr().ok_or_else(|| shape_err("frame without a body", entry))?;
        let objects = field(body, "scene_states")?;
        let mut frame = SceneDescription::new(RenderKind::FrameSequence, TRACK_MAX_X - TRACK_MIN_X, 2.5);
        frame.time = Some(time);
        for obj in items(objects, "scene states are not a list")? {
            let radius = number(obj, "object_radius")?;
            let x = number(obj, "x")?;
            let glyph = match text_of(field(obj, "shape")?).as_str() {
                "sphere" => Glyph::Sphere,
                "block" | "cube" => Glyph::Block,
                _ => return Err(shape_err("unknown shape", obj)),
            };
            frame.entities.push(Entity {
                id: text_of(field(obj, "object_id")?),
                glyph,
                color: color(obj)?,
                geometry: Geometry { x: x - radius - TRACK_MIN_X, y: 2.0 - 2.0 * radius, width: 2.0 * radius, height: 2.0 * radius },
                labels: alloc::vec![format!("x={}", format_number(round3(x))), format!("v={}", format_number(round3(number(obj, "v")?)))],
            });
        }
        frames.push(frame);
    }
    frames.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap_or(core::cmp::Ordering::Equal));
    let mut scene = SceneDescription::new(RenderKind::FrameSequence, TRACK_MAX_X - TRACK_MIN_X, 2.5 * frames.len() as f64);
    if let Some(first) = frames.first() {
        scene.entities = first.entities.clone();
    }
    scene.frames = frames;
    Ok(scene)
}

fn round3(x: f64) -> f64 {
    libm::round(x * 1000.0) / 1000.0
}

const PERSON_SPACING: f64 = 2.5;
const GENERATION_SPACING: f64 = 2.5;

fn family_tree(state: &Datum) -> Result<SceneDescription, RenderError> {
    let people = items(state, "tree is not a list of people")?;
    let ids: Vec<String> = people.iter().map(|p| field(p, "person-id").map(text_of)).collect::<Result<_, _>>()?;
    let index_of = |id: &Datum| ids.iter().position(|x| *x == text_of(id));
    // People born in the tree sit one row below their first parent;
    // partners from outside share their partner's row.
    let mut generation: Vec<Option<usize>> = alloc::vec![None; people.len()];
    for _ in 0..people.len() {
        for (i, p) in people.iter().enumerate() {
            if generation[i].is_some() {
                continue;
            }
            let parent = field(p, "parent-1-id")?;
            if matches!(parent, Datum::Nil) {
                let partner = p.get("partner-id").and_then(index_of);
                let is_outsider = partner.is_some_and(|j| j < i);
                generation[i] = match (is_outsider, partner) {
                    (true, Some(j)) => generation[j],
                    _ => Some(0),
                };
            } else if let Some(j) = index_of(parent) {
                generation[i] = generation[j].map(|g| g + 1);
            } else {
                return Err(shape_err("parent id not in tree", p));
            }
        }
    }
    let depth = generation.iter().filter_map(|g| *g).max().unwrap_or(0) + 1;
    let mut per_row = alloc::vec![0usize; depth];
    let mut scene = SceneDescription::new(RenderKind::FamilyTree, 0.0, GENERATION_SPACING * depth as f64);
    for (i, p) in people.iter().enumerate() {
        let g = generation[i].unwrap_or(0);
        let col = per_row[g];
        per_row[g] += 1;
        let gender = text_of(field(p, "gender")?);
        let name = text_of(field(p, "name")?);
        let color = if gender == "male" { [70, 130, 180] } else { [205, 92, 92] };
        scene.entities.push(Entity {
            id: ids[i].clone(),
            glyph: Glyph::Person,
            color,
            geometry: Geometry { x: 0.5 + PERSON_SPACING * col as f64, y: 0.5 + GENERATION_SPACING * g as f64, width: 1.0, height: 1.0 },
            labels: alloc::vec![name, gender],
        });
        if let Some(j) = p.get("partner-id").and_then(index_of) {
            if i < j {
                scene.edges.push(Edge { from: ids[i].clone(), to: ids[j].clone(), kind: EdgeKind::Partner });
            }
        }
        for key in ["parent-1-id", "parent-2-id"] {
            if let Some(j) = p.get(key).and_then(index_of) {
                scene.edges.push(Edge { from: ids[j].clone(), to: ids[i].clone(), kind: EdgeKind::Parent });
            }
        }
    }
    scene.width = PERSON_SPACING * per_row.iter().copied().max().unwrap_or(1).max(1) as f64;
    Ok(scene)
}

fn cell_color(kind: &str) -> [u8; 3] {
    match kind {
        "lawn" => [124, 185, 90],
        "ames" | "barlow" | "carson" | "danner" => [170, 170, 170],
        "office" => [120, 110, 160],
        "sushi" => [240, 128, 128],
        "pizza" => [244, 164, 96],
        "vegetarian" => [154, 205, 50],
        _ => [220, 220, 220],
    }
}

/// Evaluates a model variable in one world; the gridworld map and start
/// cell are constants of the model.
fn model_constant(world: &WorldModel, name: &str) -> Result<Datum, RenderError> {
    let program = Program { model: world.forms(), ..Program::default() };
    let mut sampler = Sampler::new(&program, EvalConfig::default()).map_err(|e| RenderError::Shape(e.to_string()))?;
    sampler.load_world(0).map_err(|e| RenderError::Shape(e.to_string()))?;
    let expr = parse_one(name).map_err(|e| RenderError::Shape(e.to_string()))?;
    sampler.eval_in_world(&expr).map_err(|e| RenderError::Shape(e.to_string()))
}

fn gridworld(state: &Datum, world: &WorldModel) -> Result<SceneDescription, RenderError> {
    let map = model_constant(world, "gridworld")?;
    let rows = items(&map, "gridworld is not a list of rows")?;
    let grid: Vec<Vec<String>> = rows.iter().map(|r| items(r, "row is not a list").map(|c| c.into_iter().map(text_of).collect())).collect::<Result<_, _>>()?;
    let height = grid.len();
    let width = grid.iter().map(Vec::len).max().unwrap_or(0);
    let mut scene = SceneDescription::new(RenderKind::Gridworld, width as f64, height as f64);
    for (y, row) in grid.iter().enumerate() {
        for (x, kind) in row.iter().enumerate() {
            scene.entities.push(Entity {
                id: format!("cell-{}-{}", x + 1, y + 1),
                glyph: Glyph::Cell,
                color: cell_color(kind),
                geometry: Geometry { x: x as f64, y: y as f64, width: 1.0, height: 1.0 },
                labels: alloc::vec![kind.clone()],
            });
        }
    }
    let start_x = model_constant(world, "initial_x")?.as_number().ok_or_else(|| RenderError::Shape("initial_x".into()))? as i64;
    let start_y = model_constant(world, "initial_y")?.as_number().ok_or_else(|| RenderError::Shape("initial_y".into()))? as i64;
    let steps = items(state, "policy is not a list")?;
    let (mut x, mut y) = (start_x, start_y);
    for step in steps.iter().skip(1) {
        let action = step.car().ok_or_else(|| shape_err("step without an action", step))?;
        let manner = action.car().map(text_of).unwrap_or_default();
        let direction = action.cdr().map(text_of).unwrap_or_default();
        let (dx, dy) = match direction.as_str() {
            "east" => (1, 0),
            "west" => (-1, 0),
            "north" => (0, -1),
            "south" => (0, 1),
            _ => (0, 0),
        };
        // Same movement rule as the model's transition function.
        let mut nx = if x >= width as i64 { x } else { x + dx };
        if nx < 1 {
            nx = x;
        }
        let mut ny = if y >= height as i64 { y } else { y + dy };
        if ny < 1 {
            ny = y;
        }
        scene.overlay.push(Arrow {
            from: (x as f64 - 0.5, y as f64 - 0.5),
            to: (nx as f64 - 0.5, ny as f64 - 0.5),
            label: format!("{} {}", manner, direction),
        });
        x = nx;
        y = ny;
    }
    Ok(scene)
}

// -------------------------------------------------------------------
// SVG
// -------------------------------------------------------------------

fn px(v: f64) -> String {
    format_number(libm::round(v * UNIT * 100.0) / 100.0)
}

fn rgb(c: [u8; 3]) -> String {
    format!("rgb({},{},{})", c[0], c[1], c[2])
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn draw_entity(out: &mut String, e: &Entity, dy: f64) {
    let g = &e.geometry;
    let (x, y, w, h) = (g.x, g.y + dy, g.width, g.height);
    let fill = rgb(e.color);
    let id = escape(&e.id);
    let _ = match e.glyph {
        Glyph::Bowl => writeln!(
            out,
            r#"<path data-id="{}" class="bowl" d="M{} {} A{} {} 0 0 0 {} {} Z" fill="{}" stroke="black"/>"#,
            id, px(x), px(y), px(w / 2.0), px(h), px(x + w), px(y), fill
        ),
        Glyph::Sphere | Glyph::Person => writeln!(
            out,
            r#"<circle data-id="{}" class="{}" cx="{}" cy="{}" r="{}" fill="{}" stroke="black"/>"#,
            id,
            if e.glyph == Glyph::Sphere { "sphere" } else { "person" },
            px(x + w / 2.0),
            px(y + h / 2.0),
            px(w / 2.0),
            fill
        ),
        Glyph::Mug | Glyph::Can | Glyph::Block | Glyph::Cell => {
            let class = match e.glyph {
                Glyph::Mug => "mug",
                Glyph::Can => "can",
                Glyph::Block => "block",
                _ => "cell",
            };
            writeln!(
                out,
                r#"<rect data-id="{}" class="{}" x="{}" y="{}" width="{}" height="{}" fill="{}" stroke="black"/>"#,
                id, class, px(x), px(y), px(w), px(h), fill
            )
        }
    };
    if e.glyph == Glyph::Mug {
        let _ = writeln!(
            out,
            r#"<path class="handle" d="M{} {} h{} v{} h-{}" fill="none" stroke="black"/>"#,
            px(x + w), px(y + h * 0.25), px(w * 0.25), px(h * 0.5), px(w * 0.25)
        );
    }
    let label = e.labels.join(" ");
    if !label.is_empty() {
        let ly = if e.glyph == Glyph::Cell { y + h / 2.0 } else { y + h + 0.35 };
        let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="10" text-anchor="middle">{}</text>"#, px(x + w / 2.0), px(ly), escape(&label));
    }
}

fn center_of(scene: &SceneDescription, id: &str) -> Option<(f64, f64)> {
    scene.entities.iter().find(|e| e.id == id).map(|e| (e.geometry.x + e.geometry.width / 2.0, e.geometry.y + e.geometry.height / 2.0))
}

/// Draws a laid-out scene.
pub fn to_svg(scene: &SceneDescription) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" data-kind="{}">"#,
        px(scene.width),
        px(scene.height),
        px(scene.width),
        px(scene.height),
        kind_name(scene.kind)
    );
    match scene.kind {
        RenderKind::TableScene => {
            let _ = writeln!(out, r#"<line class="table" x1="0" y1="{}" x2="{}" y2="{}" stroke="saddlebrown" stroke-width="4"/>"#, px(TABLE_Y), px(scene.width), px(TABLE_Y));
            for e in &scene.entities {
                draw_entity(&mut out, e, 0.0);
            }
        }
        RenderKind::FrameSequence => {
            for (i, frame) in scene.frames.iter().enumerate() {
                let dy = 2.5 * i as f64;
                let _ = writeln!(out, r#"<g class="frame" data-time="{}">"#, format_number(frame.time.unwrap_or(i as f64)));
                let _ = writeln!(out, r#"<line class="ground" x1="0" y1="{}" x2="{}" y2="{}" stroke="gray"/>"#, px(dy + 2.0), px(scene.width), px(dy + 2.0));
                let _ = writeln!(out, r#"<text x="4" y="{}" font-size="10">t={}</text>"#, px(dy + 0.4), format_number(frame.time.unwrap_or(0.0)));
                for e in &frame.entities {
                    draw_entity(&mut out, e, dy);
                }
                out.push_str("</g>\n");
            }
        }
        RenderKind::FamilyTree => {
            for edge in &scene.edges {
                if let (Some(a), Some(b)) = (center_of(scene, &edge.from), center_of(scene, &edge.to)) {
                    let style = match edge.kind {
                        EdgeKind::Partner => r#"class="partner" stroke="black" stroke-dasharray="4 2""#,
                        EdgeKind::Parent => r#"class="parent" stroke="gray""#,
                    };
                    let _ = writeln!(out, r#"<line {} x1="{}" y1="{}" x2="{}" y2="{}"/>"#, style, px(a.0), px(a.1), px(b.0), px(b.1));
                }
            }
            for e in &scene.entities {
                draw_entity(&mut out, e, 0.0);
            }
        }
        RenderKind::Gridworld => {
            for e in &scene.entities {
                draw_entity(&mut out, e, 0.0);
            }
            for a in &scene.overlay {
                let _ = writeln!(
                    out,
                    r#"<line class="step" x1="{}" y1="{}" x2="{}" y2="{}" stroke="black" stroke-width="3" data-label="{}"/>"#,
                    px(a.from.0), px(a.from.1), px(a.to.0), px(a.to.1), escape(&a.label)
                );
            }
        }
        RenderKind::None => {}
    }
    out.push_str("</svg>\n");
    out
}

fn kind_name(kind: RenderKind) -> &'static str {
    match kind {
        RenderKind::None => "none",
        RenderKind::TableScene => "table-scene",
        RenderKind::FrameSequence => "frame-sequence",
        RenderKind::FamilyTree => "family-tree",
        RenderKind::Gridworld => "gridworld",
    }
}
