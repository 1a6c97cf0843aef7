//! Symbolic spatial scenes and multiple-choice questions with an exact
//! ground-truth oracle.
//!
//! Scenes are grids of typed objects, not raster images, so geometric
//! transforms are coordinate maps and the oracle is a pure function.
//! Questions that would have an ambiguous answer (equal coordinates, equal
//! distances, objects on the fold line of a flip) are rejected during
//! generation rather than tie-broken.

use crate::error::{Result, SageError};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

pub const TEMPLATE_VARIANTS: u8 = 4;
const MAX_QUERY_ATTEMPTS: usize = 200;
const MAX_SCENE_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Star,
}

pub const ALL_SHAPES: [Shape; 4] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Star];

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Star => "star",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Shape {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "circle" => Ok(Shape::Circle),
            "square" => Ok(Shape::Square),
            "triangle" => Ok(Shape::Triangle),
            "star" => Ok(Shape::Star),
            other => Err(format!("unknown shape `{other}`")),
        }
    }
}

/// Object colors. `Gray` is the sentinel produced by the grayscale
/// transform and never appears in generated scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Black,
    White,
    Gray,
}

pub const PALETTE: [Color; 6] = [
    Color::Red,
    Color::Green,
    Color::Blue,
    Color::Yellow,
    Color::Black,
    Color::White,
];

impl Color {
    /// Fixed palette involution: red<->green, blue<->yellow, black<->white.
    pub fn inverted(self) -> Color {
        match self {
            Color::Red => Color::Green,
            Color::Green => Color::Red,
            Color::Blue => Color::Yellow,
            Color::Yellow => Color::Blue,
            Color::Black => Color::White,
            Color::White => Color::Black,
            Color::Gray => Color::Gray,
        }
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Black => "black",
            Color::White => "white",
            Color::Gray => "gray",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectSize {
    Small,
    Large,
}

/// One object of the symbolic scene. Coordinates use a y-up convention:
/// `above` means larger `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u8,
    pub shape: Shape,
    pub color: Color,
    pub x: i32,
    pub y: i32,
    pub size: ObjectSize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub grid_size: i32,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.objects.len() < 2 {
            return Err(SageError::Config {
                field: "objects".into(),
                reason: "a scene holds at least 2 objects".into(),
            });
        }
        for obj in &self.objects {
            if obj.x < 0 || obj.x >= self.grid_size || obj.y < 0 || obj.y >= self.grid_size {
                return Err(SageError::Config {
                    field: "objects".into(),
                    reason: format!("object {} out of grid bounds", obj.id),
                });
            }
        }
        for (i, a) in self.objects.iter().enumerate() {
            for b in &self.objects[i + 1..] {
                if a.x == b.x && a.y == b.y {
                    return Err(SageError::Config {
                        field: "objects".into(),
                        reason: format!("objects {} and {} share a cell", a.id, b.id),
                    });
                }
            }
        }
        Ok(())
    }
}

/// A textual reference to scene content: "the triangle" or "the red circle".
/// `color: None` references by shape alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Descriptor {
    pub shape: Shape,
    pub color: Option<Color>,
}

impl Descriptor {
    pub fn matches(&self, obj: &SceneObject) -> bool {
        obj.shape == self.shape && self.color.map_or(true, |c| c == obj.color)
    }

    pub fn mentions_color(&self) -> bool {
        self.color.is_some()
    }
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.color {
            Some(c) => write!(f, "{} {}", c, self.shape),
            None => write!(f, "{}", self.shape),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    RelPosH,
    RelPosV,
    Quadrant,
    Nearest,
    CountShape,
    ColorOf,
}

pub const ALL_KINDS: [QueryKind; 6] = [
    QueryKind::RelPosH,
    QueryKind::RelPosV,
    QueryKind::Quadrant,
    QueryKind::Nearest,
    QueryKind::CountShape,
    QueryKind::ColorOf,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dir {
    Left,
    Right,
    Above,
    Below,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quad {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

pub const ALL_QUADS: [Quad; 4] = [
    Quad::TopLeft,
    Quad::TopRight,
    Quad::BottomLeft,
    Quad::BottomRight,
];

/// The content of one answer option. Options carry content, not position;
/// index-level bookkeeping lives in `Query::options` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerContent {
    Dir(Dir),
    Quad(Quad),
    Count(u8),
    Color(Color),
    Object(Descriptor),
}

impl AnswerContent {
    pub fn mentions_color(&self) -> bool {
        matches!(self, AnswerContent::Color(_))
            || matches!(self, AnswerContent::Object(d) if d.mentions_color())
    }
}

impl fmt::Display for AnswerContent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnswerContent::Dir(Dir::Left) => f.write_str("left"),
            AnswerContent::Dir(Dir::Right) => f.write_str("right"),
            AnswerContent::Dir(Dir::Above) => f.write_str("above"),
            AnswerContent::Dir(Dir::Below) => f.write_str("below"),
            AnswerContent::Quad(Quad::TopLeft) => f.write_str("top-left"),
            AnswerContent::Quad(Quad::TopRight) => f.write_str("top-right"),
            AnswerContent::Quad(Quad::BottomLeft) => f.write_str("bottom-left"),
            AnswerContent::Quad(Quad::BottomRight) => f.write_str("bottom-right"),
            AnswerContent::Count(n) => write!(f, "{n}"),
            AnswerContent::Color(c) => write!(f, "{c}"),
            AnswerContent::Object(d) => write!(f, "{d}"),
        }
    }
}

impl std::str::FromStr for Color {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "red" => Ok(Color::Red),
            "green" => Ok(Color::Green),
            "blue" => Ok(Color::Blue),
            "yellow" => Ok(Color::Yellow),
            "black" => Ok(Color::Black),
            "white" => Ok(Color::White),
            "gray" => Ok(Color::Gray),
            other => Err(format!("unknown color `{other}`")),
        }
    }
}

impl std::str::FromStr for AnswerContent {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "left" => return Ok(AnswerContent::Dir(Dir::Left)),
            "right" => return Ok(AnswerContent::Dir(Dir::Right)),
            "above" => return Ok(AnswerContent::Dir(Dir::Above)),
            "below" => return Ok(AnswerContent::Dir(Dir::Below)),
            "top-left" => return Ok(AnswerContent::Quad(Quad::TopLeft)),
            "top-right" => return Ok(AnswerContent::Quad(Quad::TopRight)),
            "bottom-left" => return Ok(AnswerContent::Quad(Quad::BottomLeft)),
            "bottom-right" => return Ok(AnswerContent::Quad(Quad::BottomRight)),
            _ => {}
        }
        if let Ok(n) = s.parse::<u8>() {
            return Ok(AnswerContent::Count(n));
        }
        if let Ok(c) = s.parse::<Color>() {
            return Ok(AnswerContent::Color(c));
        }
        // object descriptor: "circle" or "red circle"
        let parts: Vec<&str> = s.split_whitespace().collect();
        match parts.as_slice() {
            [shape] => Ok(AnswerContent::Object(Descriptor {
                shape: shape.parse()?,
                color: None,
            })),
            [color, shape] => Ok(AnswerContent::Object(Descriptor {
                shape: shape.parse()?,
                color: Some(color.parse()?),
            })),
            _ => Err(format!("unparsable answer content `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub kind: QueryKind,
    pub subject: Descriptor,
    pub object: Option<Descriptor>,
    pub options: Vec<AnswerContent>,
    pub template_variant: u8,
    pub negated: bool,
}

impl Query {
    pub fn option_count(&self) -> usize {
        self.options.len()
    }

    pub fn is_binary(&self) -> bool {
        self.options.len() == 2
    }

    /// True when neither the references nor the option contents mention a
    /// color and the question itself is not about color. Appearance
    /// transforms are only valid on such queries.
    pub fn is_color_free(&self) -> bool {
        self.kind != QueryKind::ColorOf
            && !self.subject.mentions_color()
            && !self.object.map_or(false, |d| d.mentions_color())
            && !self.options.iter().any(|o| o.mentions_color())
    }
}

/// Zero-based index into a query's option list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnswerIndex(pub usize);

impl AnswerIndex {
    pub fn check(self, query: &Query) -> Result<Self> {
        if self.0 < query.options.len() {
            Ok(self)
        } else {
            Err(SageError::InvalidArg(format!(
                "answer index {} out of bounds for {} options",
                self.0,
                query.options.len()
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Grid side length G; coordinates live in [0, G-1].
    pub grid_size: i32,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Probability that the ground-truth content is placed at option
    /// position 0. Mirrors the answer-position skew found in real VQA
    /// corpora and gives position-biased policies something to exploit.
    pub answer_pos_bias: f64,
    /// Probability of negating a binary question.
    pub negation_rate: f64,
    /// Allowed option counts for kinds that support a choice (count,
    /// color, nearest). Relative-position questions are always binary and
    /// quadrant questions always have four options.
    pub option_counts: Vec<usize>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            grid_size: 8,
            min_objects: 3,
            max_objects: 6,
            answer_pos_bias: 0.82,
            negation_rate: 0.2,
            option_counts: vec![2, 4],
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let g = self.grid_size;
        if g < 2 {
            return Err(SageError::Config {
                field: "grid_size".into(),
                reason: format!("must be >= 2, got {g}"),
            });
        }
        let cells = (g as usize) * (g as usize);
        if self.min_objects < 2 || self.min_objects > self.max_objects || self.max_objects > cells
        {
            return Err(SageError::Config {
                field: "min_objects/max_objects".into(),
                reason: format!(
                    "object count range [{}, {}] must lie within [2, {cells}]",
                    self.min_objects, self.max_objects
                ),
            });
        }
        for (name, p) in [
            ("answer_pos_bias", self.answer_pos_bias),
            ("negation_rate", self.negation_rate),
        ] {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(SageError::Config {
                    field: name.into(),
                    reason: format!("must be a probability, got {p}"),
                });
            }
        }
        if self.option_counts.is_empty() || self.option_counts.iter().any(|&c| !(2..=4).contains(&c))
        {
            return Err(SageError::Config {
                field: "option_counts".into(),
                reason: "must be a non-empty subset of {2, 3, 4}".into(),
            });
        }
        Ok(())
    }
}

/// Deterministically generate a scene from a seeded rng.
pub fn generate_scene<R: Rng>(rng: &mut R, config: &EnvConfig) -> Result<Scene> {
    config.validate()?;
    let n = rng.gen_range(config.min_objects..=config.max_objects);
    let g = config.grid_size;
    let mut taken: Vec<(i32, i32)> = Vec::with_capacity(n);
    let mut objects = Vec::with_capacity(n);
    for id in 0..n {
        let (x, y) = loop {
            let x = rng.gen_range(0..g);
            let y = rng.gen_range(0..g);
            if !taken.contains(&(x, y)) {
                break (x, y);
            }
        };
        taken.push((x, y));
        objects.push(SceneObject {
            id: id as u8,
            shape: *ALL_SHAPES.choose(rng).expect("non-empty"),
            color: *PALETTE.choose(rng).expect("non-empty"),
            x,
            y,
            size: if rng.gen_bool(0.5) {
                ObjectSize::Small
            } else {
                ObjectSize::Large
            },
        });
    }
    Ok(Scene {
        grid_size: g,
        objects,
    })
}

/// A descriptor that picks out `obj` uniquely within `scene`, preferring
/// the color-free form.
fn unique_descriptor(scene: &Scene, obj: &SceneObject) -> Option<Descriptor> {
    let by_shape = Descriptor {
        shape: obj.shape,
        color: None,
    };
    if scene.objects.iter().filter(|o| by_shape.matches(o)).count() == 1 {
        return Some(by_shape);
    }
    let full = Descriptor {
        shape: obj.shape,
        color: Some(obj.color),
    };
    if scene.objects.iter().filter(|o| full.matches(o)).count() == 1 {
        return Some(full);
    }
    None
}

fn center2(g: i32) -> i32 {
    // Doubled center coordinate; comparing 2*x against this avoids
    // fractional halves.
    g - 1
}

fn on_fold(g: i32, coord: i32) -> bool {
    2 * coord == center2(g)
}

/// Place `truth` among `others` with the configured position skew.
/// Returns the option list.
fn place_options<R: Rng>(
    rng: &mut R,
    truth: AnswerContent,
    mut others: Vec<AnswerContent>,
    config: &EnvConfig,
) -> Vec<AnswerContent> {
    others.shuffle(rng);
    let c = others.len() + 1;
    let truth_pos = if rng.gen_bool(config.answer_pos_bias) {
        0
    } else {
        rng.gen_range(0..c)
    };
    let mut options = Vec::with_capacity(c);
    let mut rest = others.into_iter();
    for pos in 0..c {
        if pos == truth_pos {
            options.push(truth);
        } else {
            options.push(rest.next().expect("enough fillers"));
        }
    }
    options
}

fn pick_option_count<R: Rng>(rng: &mut R, config: &EnvConfig, available: usize) -> Option<usize> {
    let feasible: Vec<usize> = config
        .option_counts
        .iter()
        .copied()
        .filter(|&c| c <= available)
        .collect();
    feasible.choose(rng).copied()
}

/// Draw a query for `scene` with a unique, tie-free ground truth.
///
/// Question kinds whose answer would be ambiguous on the drawn objects
/// (same column, same row, equidistant candidates, subject on a fold
/// line) are rejected and another attempt is made.
pub fn generate_query<R: Rng>(rng: &mut R, scene: &Scene, config: &EnvConfig) -> Result<Query> {
    for _ in 0..MAX_QUERY_ATTEMPTS {
        let kind = *ALL_KINDS.choose(rng).expect("non-empty");
        if let Some(query) = try_build(rng, scene, config, kind) {
            debug_assert!(ground_truth(scene, &query).is_ok());
            return Ok(query);
        }
    }
    Err(SageError::UnsatisfiableScene {
        attempts: MAX_QUERY_ATTEMPTS,
    })
}

fn try_build<R: Rng>(
    rng: &mut R,
    scene: &Scene,
    config: &EnvConfig,
    kind: QueryKind,
) -> Option<Query> {
    let variant = rng.gen_range(0..TEMPLATE_VARIANTS);
    match kind {
        QueryKind::RelPosH | QueryKind::RelPosV => {
            let (a, b) = pick_pair(rng, scene)?;
            let (sd, od) = (unique_descriptor(scene, a)?, unique_descriptor(scene, b)?);
            if sd == od {
                return None;
            }
            let horizontal = kind == QueryKind::RelPosH;
            if horizontal && a.x == b.x {
                return None;
            }
            if !horizontal && a.y == b.y {
                return None;
            }
            let truth = if horizontal {
                if a.x < b.x { Dir::Left } else { Dir::Right }
            } else if a.y > b.y {
                Dir::Above
            } else {
                Dir::Below
            };
            let other = opposite(truth);
            let negated = rng.gen_bool(config.negation_rate);
            let final_truth = AnswerContent::Dir(if negated { other } else { truth });
            let final_other = AnswerContent::Dir(if negated { truth } else { other });
            let options = place_options(rng, final_truth, vec![final_other], config);
            Some(Query {
                kind,
                subject: sd,
                object: Some(od),
                options,
                template_variant: variant,
                negated,
            })
        }
        QueryKind::Quadrant => {
            let candidates: Vec<&SceneObject> = scene
                .objects
                .iter()
                .filter(|o| !on_fold(scene.grid_size, o.x) && !on_fold(scene.grid_size, o.y))
                .collect();
            let subject = candidates.choose(rng)?;
            let sd = unique_descriptor(scene, subject)?;
            let truth = quadrant_of(scene.grid_size, subject);
            let others: Vec<AnswerContent> = ALL_QUADS
                .iter()
                .filter(|&&q| q != truth)
                .map(|&q| AnswerContent::Quad(q))
                .collect();
            let options = place_options(rng, AnswerContent::Quad(truth), others, config);
            Some(Query {
                kind,
                subject: sd,
                object: None,
                options,
                template_variant: variant,
                negated: false,
            })
        }
        QueryKind::Nearest => {
            let subject = scene.objects.choose(rng)?;
            let sd = unique_descriptor(scene, subject)?;
            let mut candidates: Vec<(&SceneObject, Descriptor, i64)> = Vec::new();
            for o in &scene.objects {
                if o.id == subject.id {
                    continue;
                }
                if let Some(d) = unique_descriptor(scene, o) {
                    if d != sd {
                        candidates.push((o, d, dist2(subject, o)));
                    }
                }
            }
            let c = pick_option_count(rng, config, candidates.len())?;
            candidates.as_mut_slice().shuffle(rng);
            let chosen = &mut candidates[..c];
            chosen.sort_by_key(|(_, _, d)| *d);
            if chosen.len() > 1 && chosen[0].2 == chosen[1].2 {
                return None; // equidistant candidates: no unique nearest
            }
            let truth = AnswerContent::Object(chosen[0].1);
            let others: Vec<AnswerContent> = chosen[1..]
                .iter()
                .map(|(_, d, _)| AnswerContent::Object(*d))
                .collect();
            let negated = c == 2 && rng.gen_bool(config.negation_rate);
            let (final_truth, others) = if negated {
                (others[0], vec![truth])
            } else {
                (truth, others)
            };
            let options = place_options(rng, final_truth, others, config);
            Some(Query {
                kind,
                subject: sd,
                object: None,
                options,
                template_variant: variant,
                negated,
            })
        }
        QueryKind::CountShape => {
            let shape = *ALL_SHAPES.choose(rng).expect("non-empty");
            let m = scene.objects.iter().filter(|o| o.shape == shape).count() as u8;
            let c = pick_option_count(rng, config, usize::MAX)?;
            let mut fillers: Vec<u8> = (0..=8).filter(|&v| v != m).collect();
            fillers.shuffle(rng);
            let others: Vec<AnswerContent> = fillers[..c - 1]
                .iter()
                .map(|&v| AnswerContent::Count(v))
                .collect();
            let truth = AnswerContent::Count(m);
            let negated = c == 2 && rng.gen_bool(config.negation_rate);
            let (final_truth, others) = if negated {
                (others[0], vec![truth])
            } else {
                (truth, others)
            };
            let options = place_options(rng, final_truth, others, config);
            Some(Query {
                kind,
                subject: Descriptor { shape, color: None },
                object: None,
                options,
                template_variant: variant,
                negated,
            })
        }
        QueryKind::ColorOf => {
            // The reference must not leak the answer, so the subject is
            // referenced by shape alone.
            let candidates: Vec<&SceneObject> = scene
                .objects
                .iter()
                .filter(|o| {
                    scene.objects.iter().filter(|p| p.shape == o.shape).count() == 1
                })
                .collect();
            let subject = candidates.choose(rng)?;
            let truth = AnswerContent::Color(subject.color);
            let c = pick_option_count(rng, config, PALETTE.len())?;
            let mut fillers: Vec<Color> =
                PALETTE.iter().copied().filter(|&p| p != subject.color).collect();
            fillers.shuffle(rng);
            let others: Vec<AnswerContent> = fillers[..c - 1]
                .iter()
                .map(|&p| AnswerContent::Color(p))
                .collect();
            let negated = c == 2 && rng.gen_bool(config.negation_rate);
            let (final_truth, others) = if negated {
                (others[0], vec![truth])
            } else {
                (truth, others)
            };
            let options = place_options(rng, final_truth, others, config);
            Some(Query {
                kind,
                subject: Descriptor {
                    shape: subject.shape,
                    color: None,
                },
                object: None,
                options,
                template_variant: variant,
                negated,
            })
        }
    }
}

fn pick_pair<'a, R: Rng>(rng: &mut R, scene: &'a Scene) -> Option<(&'a SceneObject, &'a SceneObject)> {
    let n = scene.objects.len();
    let i = rng.gen_range(0..n);
    let j = loop {
        let j = rng.gen_range(0..n);
        if j != i {
            break j;
        }
    };
    Some((&scene.objects[i], &scene.objects[j]))
}

fn opposite(d: Dir) -> Dir {
    match d {
        Dir::Left => Dir::Right,
        Dir::Right => Dir::Left,
        Dir::Above => Dir::Below,
        Dir::Below => Dir::Above,
    }
}

fn quadrant_of(g: i32, obj: &SceneObject) -> Quad {
    let right = 2 * obj.x > center2(g);
    let top = 2 * obj.y > center2(g);
    match (top, right) {
        (true, false) => Quad::TopLeft,
        (true, true) => Quad::TopRight,
        (false, false) => Quad::BottomLeft,
        (false, true) => Quad::BottomRight,
    }
}

pub fn dist2(a: &SceneObject, b: &SceneObject) -> i64 {
    let dx = (a.x - b.x) as i64;
    let dy = (a.y - b.y) as i64;
    dx * dx + dy * dy
}

/// Resolve a descriptor to the unique matching object.
pub fn resolve<'a>(scene: &'a Scene, desc: &Descriptor) -> Result<&'a SceneObject> {
    let mut it = scene.objects.iter().filter(|o| desc.matches(o));
    match (it.next(), it.next()) {
        (Some(obj), None) => Ok(obj),
        _ => Err(SageError::BadDescriptor(desc.to_string())),
    }
}

/// Exact, deterministic ground truth for a (scene, query) pair.
///
/// For negated binary questions the answer is the complement of the
/// un-negated one. A tie means the generator's rejection sampling was
/// bypassed and is reported as an error rather than broken arbitrarily.
pub fn ground_truth(scene: &Scene, query: &Query) -> Result<AnswerIndex> {
    let content = match query.kind {
        QueryKind::RelPosH => {
            let s = resolve(scene, &query.subject)?;
            let o = resolve(
                scene,
                query.object.as_ref().ok_or_else(|| {
                    SageError::InvalidArg("rel_pos_h query without object ref".into())
                })?,
            )?;
            if s.x == o.x {
                return Err(SageError::Tie(format!("equal x = {}", s.x)));
            }
            AnswerContent::Dir(if s.x < o.x { Dir::Left } else { Dir::Right })
        }
        QueryKind::RelPosV => {
            let s = resolve(scene, &query.subject)?;
            let o = resolve(
                scene,
                query.object.as_ref().ok_or_else(|| {
                    SageError::InvalidArg("rel_pos_v query without object ref".into())
                })?,
            )?;
            if s.y == o.y {
                return Err(SageError::Tie(format!("equal y = {}", s.y)));
            }
            AnswerContent::Dir(if s.y > o.y { Dir::Above } else { Dir::Below })
        }
        QueryKind::Quadrant => {
            let s = resolve(scene, &query.subject)?;
            if on_fold(scene.grid_size, s.x) || on_fold(scene.grid_size, s.y) {
                return Err(SageError::Tie("subject on a fold line".into()));
            }
            AnswerContent::Quad(quadrant_of(scene.grid_size, s))
        }
        QueryKind::Nearest => {
            let s = resolve(scene, &query.subject)?;
            let mut best: Option<(AnswerContent, i64)> = None;
            let mut tie = false;
            for opt in &query.options {
                let AnswerContent::Object(d) = opt else {
                    return Err(SageError::InvalidArg(
                        "nearest query with non-object option".into(),
                    ));
                };
                let t = resolve(scene, d)?;
                let dist = dist2(s, t);
                match best {
                    None => best = Some((*opt, dist)),
                    Some((_, b)) if dist < b => {
                        best = Some((*opt, dist));
                        tie = false;
                    }
                    Some((_, b)) if dist == b => tie = true,
                    _ => {}
                }
            }
            let (content, _) = best
                .ok_or_else(|| SageError::InvalidArg("nearest query without options".into()))?;
            if tie {
                return Err(SageError::Tie("equidistant nearest candidates".into()));
            }
            content
        }
        QueryKind::CountShape => {
            let m = scene
                .objects
                .iter()
                .filter(|o| query.subject.matches(o))
                .count() as u8;
            AnswerContent::Count(m)
        }
        QueryKind::ColorOf => {
            let s = resolve(scene, &query.subject)?;
            AnswerContent::Color(s.color)
        }
    };

    let mut found: Option<usize> = None;
    for (i, opt) in query.options.iter().enumerate() {
        if *opt == content {
            if found.is_some() {
                return Err(SageError::InvalidArg("duplicate option content".into()));
            }
            found = Some(i);
        }
    }
    let idx = found.ok_or_else(|| SageError::TruthNotInOptions(content.to_string()))?;
    if query.negated {
        if query.options.len() != 2 {
            return Err(SageError::InvalidArg(
                "negation is only defined for binary questions".into(),
            ));
        }
        Ok(AnswerIndex(1 - idx))
    } else {
        Ok(AnswerIndex(idx))
    }
}

/// Draw a (scene, query, truth) sample, regenerating the scene if it
/// admits no tie-free query.
pub fn sample_instance<R: Rng>(
    rng: &mut R,
    config: &EnvConfig,
) -> Result<(Scene, Query, AnswerIndex)> {
    for _ in 0..MAX_SCENE_ATTEMPTS {
        let scene = generate_scene(rng, config)?;
        match generate_query(rng, &scene, config) {
            Ok(query) => {
                let truth = ground_truth(&scene, &query)?;
                return Ok((scene, query, truth));
            }
            Err(SageError::UnsatisfiableScene { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(SageError::UnsatisfiableScene {
        attempts: MAX_SCENE_ATTEMPTS * MAX_QUERY_ATTEMPTS,
    })
}

/// Render the question as English text. Purely cosmetic; the policy never
/// sees it.
pub fn render_text(query: &Query) -> String {
    let s = query.subject.to_string();
    let o = query.object.map(|d| d.to_string()).unwrap_or_default();
    let v = (query.template_variant % TEMPLATE_VARIANTS) as usize;
    let not = if query.negated { "NOT " } else { "" };
    match query.kind {
        QueryKind::RelPosH => [
            format!("Is the {s} {not}left or right of the {o}?"),
            format!("Relative to the {o}, is the {s} {not}on the left or on the right?"),
            format!("Does the {s} {not}sit to the left or to the right of the {o}?"),
            format!("On which side of the {o} is the {s} {not}found: left or right?"),
        ][v]
            .clone(),
        QueryKind::RelPosV => [
            format!("Is the {s} {not}above or below the {o}?"),
            format!("Relative to the {o}, is the {s} {not}up top or down below?"),
            format!("Does the {s} {not}lie above or below the {o}?"),
            format!("Where is the {s} relative to the {o}: {not}above or below?"),
        ][v]
            .clone(),
        QueryKind::Quadrant => [
            format!("Which quadrant holds the {s}?"),
            format!("In which quadrant of the image is the {s}?"),
            format!("The {s} is located in which quadrant?"),
            format!("Name the quadrant containing the {s}."),
        ][v]
            .clone(),
        QueryKind::Nearest => [
            format!("Which object is {not}nearest to the {s}?"),
            format!("Which of these is {not}closest to the {s}?"),
            format!("Of the listed objects, which is {not}the nearest one to the {s}?"),
            format!("Pick the object {not}at the smallest distance from the {s}."),
        ][v]
            .clone(),
        QueryKind::CountShape => {
            let shape = query.subject.shape;
            [
                format!("How many {shape}s are {not}in the scene?"),
                format!("What is {not}the number of {shape}s shown?"),
                format!("Count the {shape}s: which number is {not}correct?"),
                format!("The scene contains how many {shape}s ({not}exactly)?"),
            ][v]
                .clone()
        }
        QueryKind::ColorOf => [
            format!("What color is the {s} ({not}exactly)?"),
            format!("Which color does the {s} {not}have?"),
            format!("The {s} is {not}which of these colors?"),
            format!("Identify the color that the {s} does {not}show."),
        ][v]
            .clone(),
    }
}

/// One exported corpus line: the full (scene, query, ground truth) triple
/// with stable field names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub grid_size: i32,
    pub objects: Vec<SceneObject>,
    pub kind: QueryKind,
    pub subject_ref: Descriptor,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub object_ref: Option<Descriptor>,
    pub options: Vec<String>,
    pub template_variant: u8,
    pub negated: bool,
    pub answer_index: usize,
}

impl CorpusRecord {
    pub fn new(scene: &Scene, query: &Query, truth: AnswerIndex) -> Self {
        Self {
            grid_size: scene.grid_size,
            objects: scene.objects.clone(),
            kind: query.kind,
            subject_ref: query.subject,
            object_ref: query.object,
            options: query.options.iter().map(|o| o.to_string()).collect(),
            template_variant: query.template_variant,
            negated: query.negated,
            answer_index: truth.0,
        }
    }

    /// Rebuild the (scene, query, truth) triple, re-deriving the answer
    /// from the oracle and cross-checking it against the stored index.
    pub fn to_instance(&self) -> Result<(Scene, Query, AnswerIndex)> {
        let scene = Scene {
            grid_size: self.grid_size,
            objects: self.objects.clone(),
        };
        scene.validate()?;
        let options: Vec<AnswerContent> = self
            .options
            .iter()
            .map(|s| s.parse().map_err(SageError::InvalidArg))
            .collect::<Result<_>>()?;
        let query = Query {
            kind: self.kind,
            subject: self.subject_ref,
            object: self.object_ref,
            options,
            template_variant: self.template_variant,
            negated: self.negated,
        };
        let truth = ground_truth(&scene, &query)?;
        if truth.0 != self.answer_index {
            return Err(SageError::InvalidArg(format!(
                "stored answer index {} disagrees with the oracle ({})",
                self.answer_index, truth.0
            )));
        }
        Ok((scene, query, truth))
    }
}
