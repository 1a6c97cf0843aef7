//! Per-option feature extraction.
//!
//! Each option of a query is embedded into a fixed-dimension vector with
//! entries in [-1, 1]. The layout deliberately contains two kinds of
//! signal:
//!
//! * geometry-alignment blocks, functions of the (transformed) scene that
//!   make the correct answering rule a single positive weight per block
//!   under a linear-softmax policy, and
//! * option-position and visual-field-side blocks, which let a policy
//!   score options by where they sit in the list or where the subject
//!   sits in the frame. These carry the spurious shortcuts a biased
//!   initialization exploits.
//!
//! Blocks that are constant across a query's options (kind, raw deltas,
//! sides, variant, negation flag) cancel in the softmax; they are kept so
//! the embedding describes the full input.

use crate::error::{Result, SageError};
use crate::scene::{
    resolve, AnswerContent, Color, Dir, Quad, Query, QueryKind, Scene,
    TEMPLATE_VARIANTS,
};

pub type FeatureVector = Vec<f64>;

const KIND: usize = 0; // 6
const POSITION: usize = KIND + 6; // 4
const CONTENT_CLASS: usize = POSITION + 4; // 5
const CONTENT_DIR: usize = CONTENT_CLASS + 5; // 4
const CONTENT_QUAD: usize = CONTENT_DIR + 4; // 4
const CONTENT_COUNT: usize = CONTENT_QUAD + 4; // 9
const CONTENT_COLOR: usize = CONTENT_COUNT + 9; // 7
const CONTENT_SHAPE: usize = CONTENT_COLOR + 7; // 4
const CONTENT_OBJ_COLOR: usize = CONTENT_SHAPE + 4; // 7
const ALIGN: usize = CONTENT_OBJ_COLOR + 7; // 1
const ALIGN_NEG: usize = ALIGN + 1; // 1
const SIDE_ALIGN: usize = ALIGN_NEG + 1; // 2
const RAW_DELTA: usize = SIDE_ALIGN + 2; // 2
const RAW_SIDE: usize = RAW_DELTA + 2; // 2
const VARIANT: usize = RAW_SIDE + 2; // 4
const NEGATED: usize = VARIANT + 4; // 1

pub const FEATURE_DIM: usize = NEGATED + 1;

/// Index of the option-position-0 indicator.
pub const IDX_POSITION_0: usize = POSITION;
/// Indices of the horizontal/vertical side-alignment shortcut features.
pub const IDX_SIDE_ALIGN_H: usize = SIDE_ALIGN;
pub const IDX_SIDE_ALIGN_V: usize = SIDE_ALIGN + 1;
/// Index of the pooled geometry-alignment feature and its negation
/// interaction.
pub const IDX_ALIGN: usize = ALIGN;
pub const IDX_ALIGN_NEG: usize = ALIGN_NEG;

pub fn feature_dim() -> usize {
    FEATURE_DIM
}

fn kind_index(kind: QueryKind) -> usize {
    match kind {
        QueryKind::RelPosH => 0,
        QueryKind::RelPosV => 1,
        QueryKind::Quadrant => 2,
        QueryKind::Nearest => 3,
        QueryKind::CountShape => 4,
        QueryKind::ColorOf => 5,
    }
}

fn color_index(c: Color) -> usize {
    match c {
        Color::Red => 0,
        Color::Green => 1,
        Color::Blue => 2,
        Color::Yellow => 3,
        Color::Black => 4,
        Color::White => 5,
        Color::Gray => 6,
    }
}

fn shape_index(s: crate::scene::Shape) -> usize {
    match s {
        crate::scene::Shape::Circle => 0,
        crate::scene::Shape::Square => 1,
        crate::scene::Shape::Triangle => 2,
        crate::scene::Shape::Star => 3,
    }
}

/// Horizontal polarity of a content: -1 for left-ish, +1 for right-ish.
fn h_axis(content: AnswerContent) -> f64 {
    match content {
        AnswerContent::Dir(Dir::Left) => -1.0,
        AnswerContent::Dir(Dir::Right) => 1.0,
        AnswerContent::Quad(Quad::TopLeft | Quad::BottomLeft) => -1.0,
        AnswerContent::Quad(Quad::TopRight | Quad::BottomRight) => 1.0,
        _ => 0.0,
    }
}

fn s_req(subject: Option<&crate::scene::SceneObject>) -> Result<&crate::scene::SceneObject> {
    subject.ok_or_else(|| SageError::InvalidArg("object option without a subject".into()))
}

/// Vertical polarity: +1 for above/top, -1 for below/bottom (y grows up).
fn v_axis(content: AnswerContent) -> f64 {
    match content {
        AnswerContent::Dir(Dir::Above) => 1.0,
        AnswerContent::Dir(Dir::Below) => -1.0,
        AnswerContent::Quad(Quad::TopLeft | Quad::TopRight) => 1.0,
        AnswerContent::Quad(Quad::BottomLeft | Quad::BottomRight) => -1.0,
        _ => 0.0,
    }
}

/// Per-option feature matrix for a (scene, query) pair: one row per
/// option, `FEATURE_DIM` columns each, entries in [-1, 1].
pub fn option_features(scene: &Scene, query: &Query) -> Result<Vec<FeatureVector>> {
    let g = scene.grid_size;
    if g < 2 {
        return Err(SageError::InvalidArg("grid too small".into()));
    }
    let span = (g - 1) as f64;
    let center = span / 2.0;

    // Count questions reference a shape class, not a single object.
    let subject = if query.kind == QueryKind::CountShape {
        None
    } else {
        Some(resolve(scene, &query.subject)?)
    };
    let anchor: Option<(f64, f64)> = match (&subject, &query.object) {
        (Some(_), Some(od)) => {
            let o = resolve(scene, od)?;
            Some((o.x as f64, o.y as f64))
        }
        (Some(_), None) => Some((center, center)),
        (None, _) => None,
    };
    let (dx, dy) = match (subject, anchor) {
        (Some(s), Some((ax, ay))) => ((s.x as f64 - ax) / span, (s.y as f64 - ay) / span),
        _ => (0.0, 0.0),
    };
    let (side_h, side_v) = match subject {
        Some(s) => (
            (s.x as f64 - center).signum(),
            (s.y as f64 - center).signum(),
        ),
        None => (0.0, 0.0),
    };
    let shape_count = scene
        .objects
        .iter()
        .filter(|o| query.subject.matches(o))
        .count() as f64;
    let dist_max = std::f64::consts::SQRT_2 * span;
    let neg = if query.negated { 1.0 } else { 0.0 };

    let mut rows = Vec::with_capacity(query.options.len());
    for (pos, &content) in query.options.iter().enumerate() {
        let mut f = vec![0.0; FEATURE_DIM];
        f[KIND + kind_index(query.kind)] = 1.0;
        if pos < 4 {
            f[POSITION + pos] = 1.0;
        }
        match content {
            AnswerContent::Dir(d) => {
                f[CONTENT_CLASS] = 1.0;
                f[CONTENT_DIR
                    + match d {
                        Dir::Left => 0,
                        Dir::Right => 1,
                        Dir::Above => 2,
                        Dir::Below => 3,
                    }] = 1.0;
            }
            AnswerContent::Quad(q) => {
                f[CONTENT_CLASS + 1] = 1.0;
                f[CONTENT_QUAD
                    + match q {
                        Quad::TopLeft => 0,
                        Quad::TopRight => 1,
                        Quad::BottomLeft => 2,
                        Quad::BottomRight => 3,
                    }] = 1.0;
            }
            AnswerContent::Count(n) => {
                f[CONTENT_CLASS + 2] = 1.0;
                f[CONTENT_COUNT + (n as usize).min(8)] = 1.0;
            }
            AnswerContent::Color(c) => {
                f[CONTENT_CLASS + 3] = 1.0;
                f[CONTENT_COLOR + color_index(c)] = 1.0;
            }
            AnswerContent::Object(d) => {
                f[CONTENT_CLASS + 4] = 1.0;
                f[CONTENT_SHAPE + shape_index(d.shape)] = 1.0;
                if let Some(c) = d.color {
                    f[CONTENT_OBJ_COLOR + color_index(c)] = 1.0;
                }
            }
        }

        // Geometry alignment: one pooled feature, positive exactly on the
        // content that correctly describes the configuration, whatever
        // the question kind. Pooling means a single weight learns from
        // every kind at once. Square-root compression keeps the sign and
        // bounds while lifting small offsets, so near-boundary inputs
        // still separate cleanly under a linear score.
        let ga_h = h_axis(content) * dx.signum() * dx.abs().sqrt();
        let ga_v = v_axis(content) * dy.signum() * dy.abs().sqrt();
        let align = match content {
            AnswerContent::Dir(Dir::Left | Dir::Right) => ga_h,
            AnswerContent::Dir(Dir::Above | Dir::Below) => ga_v,
            AnswerContent::Quad(_) => 0.5 * (ga_h + ga_v),
            AnswerContent::Count(n) => {
                2.0 * (0.5 - (n as f64 - shape_count).abs() / 8.0)
            }
            AnswerContent::Color(c) => match subject {
                Some(s) if s.color == c => 1.0,
                _ => -1.0,
            },
            AnswerContent::Object(d) => {
                let t = resolve(scene, &d)?;
                let dist = (crate::scene::dist2(s_req(subject)?, t) as f64).sqrt();
                1.0 - 2.0 * dist / dist_max
            }
        };
        let align = align.clamp(-1.0, 1.0);
        f[ALIGN] = align;
        f[ALIGN_NEG] = align * neg;

        f[SIDE_ALIGN] = h_axis(content) * side_h;
        f[SIDE_ALIGN + 1] = v_axis(content) * side_v;
        f[RAW_DELTA] = dx;
        f[RAW_DELTA + 1] = dy;
        f[RAW_SIDE] = side_h;
        f[RAW_SIDE + 1] = side_v;
        f[VARIANT + (query.template_variant % TEMPLATE_VARIANTS) as usize] = 1.0;
        f[NEGATED] = neg;

        rows.push(f);
    }
    Ok(rows)
}
