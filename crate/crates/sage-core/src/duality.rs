//! The duality-operation algebra: input transforms, induced answer
//! mappings, applicability domains, composition and axiom verification.
//!
//! Every operation must commute with the oracle on its domain:
//! `ground_truth(apply(op, v, q)) == map_answer(op, .., ground_truth(v, q))`.
//! `verify_axiom` samples in-domain inputs and reports counterexamples.

use crate::error::{Result, SageError};
use crate::scene::{
    generate_query, generate_scene, ground_truth, AnswerContent, AnswerIndex, Color, Dir,
    EnvConfig, Quad, Query, Scene, TEMPLATE_VARIANTS,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Symbolic option permutations; materialized per option count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermKind {
    /// pi(i) = C-1-i; the new list is the old one reversed.
    Reverse,
    /// pi(i) = (i+1) mod C; each option moves one position up.
    CycleUp,
}

impl PermKind {
    /// The permutation as a table: new position i holds old option pi(i).
    pub fn table(self, c: usize) -> Vec<usize> {
        match self {
            PermKind::Reverse => (0..c).map(|i| c - 1 - i).collect(),
            PermKind::CycleUp => (0..c).map(|i| (i + 1) % c).collect(),
        }
    }

    /// Where an answer at old index `answer` sits after the reorder.
    pub fn new_index_of(self, c: usize, answer: usize) -> usize {
        self.table(c)
            .iter()
            .position(|&old| old == answer)
            .expect("permutation is a bijection")
    }
}

/// Primitive transforms. A `DualityOp` is a chain of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prim {
    HFlip,
    VFlip,
    Rot180,
    ColorInvert,
    Grayscale,
    OptionPerm(PermKind),
    Negation,
    Paraphrase,
}

pub const PRIM_NAMES: [(&str, Prim); 9] = [
    ("hflip", Prim::HFlip),
    ("vflip", Prim::VFlip),
    ("rot180", Prim::Rot180),
    ("color_invert", Prim::ColorInvert),
    ("grayscale", Prim::Grayscale),
    ("option_reverse", Prim::OptionPerm(PermKind::Reverse)),
    ("option_cycle", Prim::OptionPerm(PermKind::CycleUp)),
    ("negation", Prim::Negation),
    ("paraphrase", Prim::Paraphrase),
];

impl Prim {
    pub fn name(self) -> &'static str {
        PRIM_NAMES
            .iter()
            .find(|(_, p)| *p == self)
            .map(|(n, _)| *n)
            .expect("all primitives named")
    }

    pub fn from_name(name: &str) -> Result<Self> {
        PRIM_NAMES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, p)| *p)
            .ok_or_else(|| SageError::UnknownOp(name.to_string()))
    }

    fn domain_ok(self, query: &Query) -> bool {
        match self {
            Prim::HFlip | Prim::VFlip | Prim::Rot180 | Prim::Paraphrase => true,
            Prim::OptionPerm(_) => true,
            // Appearance perturbations keep the question fixed, so the
            // question must not mention color anywhere: a color answer,
            // a color reference or a colored option would dangle.
            Prim::ColorInvert | Prim::Grayscale => query.is_color_free(),
            Prim::Negation => query.is_binary(),
        }
    }

    fn apply_scene(self, scene: &Scene) -> Scene {
        let g = scene.grid_size;
        let mut s = scene.clone();
        match self {
            Prim::HFlip => {
                for o in &mut s.objects {
                    o.x = g - 1 - o.x;
                }
            }
            Prim::VFlip => {
                for o in &mut s.objects {
                    o.y = g - 1 - o.y;
                }
            }
            Prim::Rot180 => {
                for o in &mut s.objects {
                    o.x = g - 1 - o.x;
                    o.y = g - 1 - o.y;
                }
            }
            Prim::ColorInvert => {
                for o in &mut s.objects {
                    o.color = o.color.inverted();
                }
            }
            Prim::Grayscale => {
                for o in &mut s.objects {
                    o.color = Color::Gray;
                }
            }
            Prim::OptionPerm(_) | Prim::Negation | Prim::Paraphrase => {}
        }
        s
    }

    fn apply_query(self, query: &Query) -> Query {
        let mut q = query.clone();
        match self {
            Prim::HFlip | Prim::VFlip | Prim::Rot180 | Prim::ColorInvert | Prim::Grayscale => {}
            Prim::OptionPerm(kind) => {
                let table = kind.table(query.options.len());
                q.options = table.iter().map(|&old| query.options[old]).collect();
            }
            Prim::Negation => {
                q.negated = !q.negated;
            }
            Prim::Paraphrase => {
                q.template_variant = (q.template_variant + 1) % TEMPLATE_VARIANTS;
            }
        }
        q
    }

    /// Answer mapping of this primitive, resolved at the index level.
    /// `pre` is the query the answer refers to, `post` its transform.
    fn map_answer(self, pre: &Query, post: &Query, answer: usize) -> Result<usize> {
        match self.mapping() {
            AnswerMapping::Identity => lookup(post, pre.options[answer]),
            AnswerMapping::ContentMirror(kind) => {
                lookup(post, kind.map_content(pre.options[answer]))
            }
            AnswerMapping::PositionPerm(kind) => {
                Ok(kind.new_index_of(pre.options.len(), answer))
            }
            AnswerMapping::Complement => {
                if pre.options.len() != 2 {
                    return Err(SageError::UnmappableAnswer(
                        "complement needs a binary question".into(),
                    ));
                }
                Ok(1 - answer)
            }
        }
    }

    pub fn mapping(self) -> AnswerMapping {
        match self {
            Prim::HFlip => AnswerMapping::ContentMirror(MirrorKind::Horizontal),
            Prim::VFlip => AnswerMapping::ContentMirror(MirrorKind::Vertical),
            Prim::Rot180 => AnswerMapping::ContentMirror(MirrorKind::Both),
            Prim::ColorInvert | Prim::Grayscale | Prim::Paraphrase => AnswerMapping::Identity,
            Prim::OptionPerm(kind) => AnswerMapping::PositionPerm(kind),
            Prim::Negation => AnswerMapping::Complement,
        }
    }
}

fn lookup(query: &Query, content: AnswerContent) -> Result<usize> {
    query
        .options
        .iter()
        .position(|&o| o == content)
        .ok_or_else(|| SageError::UnmappableAnswer(content.to_string()))
}

/// Spatial mirror maps over answer contents; identity on non-spatial
/// contents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MirrorKind {
    Horizontal,
    Vertical,
    Both,
}

impl MirrorKind {
    pub fn map_content(self, content: AnswerContent) -> AnswerContent {
        let (h, v) = match self {
            MirrorKind::Horizontal => (true, false),
            MirrorKind::Vertical => (false, true),
            MirrorKind::Both => (true, true),
        };
        match content {
            AnswerContent::Dir(d) => AnswerContent::Dir(match d {
                Dir::Left if h => Dir::Right,
                Dir::Right if h => Dir::Left,
                Dir::Above if v => Dir::Below,
                Dir::Below if v => Dir::Above,
                other => other,
            }),
            AnswerContent::Quad(q) => {
                let (top, right) = match q {
                    Quad::TopLeft => (true, false),
                    Quad::TopRight => (true, true),
                    Quad::BottomLeft => (false, false),
                    Quad::BottomRight => (false, true),
                };
                let (top, right) = (top ^ v, right ^ h);
                AnswerContent::Quad(match (top, right) {
                    (true, false) => Quad::TopLeft,
                    (true, true) => Quad::TopRight,
                    (false, false) => Quad::BottomLeft,
                    (false, true) => Quad::BottomRight,
                })
            }
            other => other,
        }
    }
}

/// How an operation maps answers across the transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMapping {
    Identity,
    ContentMirror(MirrorKind),
    PositionPerm(PermKind),
    /// The other option of a binary question.
    Complement,
}

/// A duality operation: a chain of primitive transforms together with the
/// composed answer mapping and the intersected applicability domain.
///
/// `steps` are stored in application order (`steps[0]` runs first).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DualityOp {
    steps: Vec<Prim>,
    /// Diagnostic switch: report the identity mapping regardless of the
    /// transform, deliberately breaking the oracle-commutation axiom.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    corrupt_identity_mapping: bool,
}

impl fmt::Display for DualityOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl DualityOp {
    pub fn from_prim(prim: Prim) -> Self {
        Self {
            steps: vec![prim],
            corrupt_identity_mapping: false,
        }
    }

    pub fn from_chain(steps: Vec<Prim>) -> Result<Self> {
        if steps.is_empty() {
            return Err(SageError::InvalidArg("empty transform chain".into()));
        }
        Ok(Self {
            steps,
            corrupt_identity_mapping: false,
        })
    }

    /// Test fixture: same transform, identity answer mapping. Violates
    /// the oracle-commutation axiom on purpose so that harness negatives
    /// have a known shape.
    pub fn corrupted_with_identity_mapping(mut self) -> Self {
        self.corrupt_identity_mapping = true;
        self
    }

    /// Canonical id; composition chains read right-to-left like function
    /// composition ("hflip∘negation" applies negation first).
    pub fn id(&self) -> String {
        let mut names: Vec<&str> = self.steps.iter().map(|p| p.name()).collect();
        names.reverse();
        names.join("∘")
    }

    pub fn steps(&self) -> &[Prim] {
        &self.steps
    }

    /// Stepwise domain check. No primitive changes a query's option
    /// count or whether it mentions color, so each step's predicate can
    /// be evaluated against the original query directly.
    pub fn applicable(&self, scene: &Scene, query: &Query) -> bool {
        let _ = scene;
        self.steps.iter().all(|prim| prim.domain_ok(query))
    }

    pub fn apply(&self, scene: &Scene, query: &Query) -> Result<(Scene, Query)> {
        if !self.applicable(scene, query) {
            return Err(SageError::NotApplicable(self.id()));
        }
        let mut s = scene.clone();
        let mut q = query.clone();
        for prim in &self.steps {
            s = prim.apply_scene(&s);
            q = prim.apply_query(&q);
        }
        Ok((s, q))
    }

    /// Map an answer index on the original query to the corresponding
    /// index on the dual query, threading it through each step.
    pub fn map_answer(
        &self,
        original_query: &Query,
        dual_query: &Query,
        answer: AnswerIndex,
    ) -> Result<AnswerIndex> {
        answer.check(original_query)?;
        let mut query = original_query.clone();
        let mut idx = answer.0;
        for prim in &self.steps {
            let next_query = prim.apply_query(&query);
            idx = prim.map_answer(&query, &next_query, idx)?;
            query = next_query;
        }
        if query.options != dual_query.options || query.negated != dual_query.negated {
            return Err(SageError::UnmappableAnswer(format!(
                "dual query does not correspond to `{}` applied to the original",
                self.id()
            )));
        }
        if self.corrupt_identity_mapping {
            return Ok(answer);
        }
        Ok(AnswerIndex(idx))
    }

    /// Net mapping classification for the registry export.
    pub fn mapping_kind(&self) -> String {
        let nontrivial: Vec<AnswerMapping> = self
            .steps
            .iter()
            .map(|p| p.mapping())
            .filter(|m| *m != AnswerMapping::Identity)
            .collect();
        match nontrivial.as_slice() {
            [] => "identity".to_string(),
            [AnswerMapping::ContentMirror(_)] => "content_map".to_string(),
            [AnswerMapping::PositionPerm(_)] => "position_permutation".to_string(),
            [AnswerMapping::Complement] => "complement".to_string(),
            _ => "chain".to_string(),
        }
    }

    /// Conjunction of the chain's domain restrictions.
    pub fn domain_tag(&self) -> String {
        let binary = self.steps.iter().any(|p| matches!(p, Prim::Negation));
        let color_free = self
            .steps
            .iter()
            .any(|p| matches!(p, Prim::ColorInvert | Prim::Grayscale));
        match (binary, color_free) {
            (false, false) => "all".to_string(),
            (true, false) => "binary".to_string(),
            (false, true) => "color_free".to_string(),
            (true, true) => "binary+color_free".to_string(),
        }
    }
}

/// The nine built-in operations.
pub fn builtin_pool() -> Vec<DualityOp> {
    PRIM_NAMES
        .iter()
        .map(|(_, p)| DualityOp::from_prim(*p))
        .collect()
}

pub fn builtin_by_id(id: &str) -> Result<DualityOp> {
    Prim::from_name(id).map(DualityOp::from_prim)
}

/// Compose two operations: `compose(op1, op2)` applies `op2` first, then
/// `op1`. The domain is the set of inputs `op2` accepts whose transform
/// `op1` accepts, which `applicable` evaluates stepwise.
pub fn compose(op1: &DualityOp, op2: &DualityOp) -> DualityOp {
    let mut steps = op2.steps.clone();
    steps.extend(op1.steps.iter().copied());
    DualityOp {
        steps,
        corrupt_identity_mapping: op1.corrupt_identity_mapping || op2.corrupt_identity_mapping,
    }
}

/// One counterexample to the oracle-commutation axiom.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub scene: Scene,
    pub query: Query,
    pub mapped_answer: usize,
    pub dual_truth: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AxiomReport {
    pub op_id: String,
    pub samples_tested: usize,
    pub violations: Vec<Violation>,
}

impl AxiomReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Sample in-domain inputs and check that the oracle commutes with the
/// operation. Inputs outside the domain are skipped and do not count.
pub fn verify_axiom<R: Rng>(
    op: &DualityOp,
    n_samples: usize,
    rng: &mut R,
    env: &EnvConfig,
) -> Result<AxiomReport> {
    if n_samples == 0 {
        return Err(SageError::InvalidArg("n_samples must be >= 1".into()));
    }
    let mut report = AxiomReport {
        op_id: op.id(),
        samples_tested: 0,
        violations: Vec::new(),
    };
    let budget = n_samples.saturating_mul(50);
    let mut attempts = 0usize;
    while report.samples_tested < n_samples && attempts < budget {
        attempts += 1;
        let scene = generate_scene(rng, env)?;
        let Ok(query) = generate_query(rng, &scene, env) else {
            continue;
        };
        if !op.applicable(&scene, &query) {
            continue;
        }
        report.samples_tested += 1;
        check_axiom_once(op, &scene, &query, &mut report.violations)?;
    }
    if report.samples_tested == 0 {
        return Err(SageError::EmptyDomain {
            op: op.id(),
            attempts: budget,
        });
    }
    Ok(report)
}

/// Axiom check against a pre-built corpus; every in-domain pair counts.
pub fn verify_axiom_on(op: &DualityOp, corpus: &[(Scene, Query)]) -> Result<AxiomReport> {
    let mut report = AxiomReport {
        op_id: op.id(),
        samples_tested: 0,
        violations: Vec::new(),
    };
    for (scene, query) in corpus {
        if !op.applicable(scene, query) {
            continue;
        }
        report.samples_tested += 1;
        check_axiom_once(op, scene, query, &mut report.violations)?;
    }
    Ok(report)
}

fn check_axiom_once(
    op: &DualityOp,
    scene: &Scene,
    query: &Query,
    violations: &mut Vec<Violation>,
) -> Result<()> {
    let truth = ground_truth(scene, query)?;
    let (dual_scene, dual_query) = op.apply(scene, query)?;
    let dual_truth = ground_truth(&dual_scene, &dual_query)?;
    let mapped = op.map_answer(query, &dual_query, truth)?;
    if mapped != dual_truth {
        violations.push(Violation {
            scene: scene.clone(),
            query: query.clone(),
            mapped_answer: mapped.0,
            dual_truth: dual_truth.0,
        });
    }
    Ok(())
}

/// Behavioral signature on a probe bank: transform output plus the full
/// answer map, or None where inapplicable. Two ops with equal signatures
/// are indistinguishable on the bank.
fn behavior_signature(
    op: &DualityOp,
    bank: &[(Scene, Query)],
) -> Vec<Option<(Scene, Query, Vec<usize>)>> {
    bank.iter()
        .map(|(scene, query)| {
            if !op.applicable(scene, query) {
                return None;
            }
            let (ds, dq) = op.apply(scene, query).ok()?;
            let maps: Option<Vec<usize>> = (0..query.options.len())
                .map(|a| op.map_answer(query, &dq, AnswerIndex(a)).ok().map(|i| i.0))
                .collect();
            Some((ds, dq, maps?))
        })
        .collect()
}

fn is_identity_signature(
    bank: &[(Scene, Query)],
    sig: &[Option<(Scene, Query, Vec<usize>)>],
) -> bool {
    bank.iter().zip(sig).all(|((s, q), entry)| match entry {
        None => true,
        Some((ds, dq, map)) => {
            ds == s && dq == q && map.iter().enumerate().all(|(i, &m)| i == m)
        }
    })
}

/// The nine built-ins plus depth-2 compositions, deduplicated by
/// behavioral equality on a probe bank and capped at `max_pool`.
pub fn discover_pool<R: Rng>(
    rng: &mut R,
    env: &EnvConfig,
    max_pool: usize,
) -> Result<Vec<DualityOp>> {
    let mut bank = Vec::with_capacity(64);
    let mut guard = 0;
    while bank.len() < 64 {
        guard += 1;
        if guard > 10_000 {
            return Err(SageError::UnsatisfiableScene { attempts: guard });
        }
        let scene = generate_scene(rng, env)?;
        if let Ok(query) = generate_query(rng, &scene, env) {
            bank.push((scene, query));
        }
    }

    let mut ops = builtin_pool();
    let mut sigs: Vec<_> = ops.iter().map(|op| behavior_signature(op, &bank)).collect();

    let builtins = builtin_pool();
    'outer: for outer in &builtins {
        for inner in &builtins {
            if ops.len() >= max_pool {
                break 'outer;
            }
            let candidate = compose(outer, inner);
            let sig = behavior_signature(&candidate, &bank);
            if sig.iter().all(Option::is_none) {
                continue; // empty domain on the bank
            }
            if is_identity_signature(&bank, &sig) {
                continue;
            }
            if sigs.iter().any(|s| *s == sig) {
                continue;
            }
            ops.push(candidate);
            sigs.push(sig);
        }
    }
    Ok(ops)
}

/// Registry line for export/import.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub id: String,
    pub transform_chain: Vec<String>,
    pub mapping_kind: String,
    pub domain_tag: String,
}

impl RegistryEntry {
    pub fn from_op(op: &DualityOp) -> Self {
        Self {
            id: op.id(),
            transform_chain: op.steps().iter().map(|p| p.name().to_string()).collect(),
            mapping_kind: op.mapping_kind(),
            domain_tag: op.domain_tag(),
        }
    }

    pub fn to_op(&self) -> Result<DualityOp> {
        let steps: Result<Vec<Prim>> = self
            .transform_chain
            .iter()
            .map(|n| Prim::from_name(n))
            .collect();
        let op = DualityOp::from_chain(steps?)?;
        if op.id() != self.id {
            return Err(SageError::UnknownOp(format!(
                "registry id `{}` does not match its chain (expected `{}`)",
                self.id,
                op.id()
            )));
        }
        Ok(op)
    }
}

pub fn export_registry(ops: &[DualityOp]) -> Vec<RegistryEntry> {
    ops.iter().map(RegistryEntry::from_op).collect()
}

pub fn import_registry(entries: &[RegistryEntry]) -> Result<Vec<DualityOp>> {
    entries.iter().map(RegistryEntry::to_op).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::sample_instance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn op(name: &str) -> DualityOp {
        builtin_by_id(name).unwrap()
    }

    fn sample_bank(n: usize, seed: u64) -> Vec<(Scene, Query)> {
        let env = EnvConfig::default();
        let mut r = rng(seed);
        (0..n)
            .map(|_| {
                let (s, q, _) = sample_instance(&mut r, &env).unwrap();
                (s, q)
            })
            .collect()
    }

    #[test]
    fn builtin_pool_has_nine_ops() {
        let pool = builtin_pool();
        assert_eq!(pool.len(), 9);
        let ids: Vec<String> = pool.iter().map(|o| o.id()).collect();
        for expected in [
            "hflip",
            "vflip",
            "rot180",
            "color_invert",
            "grayscale",
            "option_reverse",
            "option_cycle",
            "negation",
            "paraphrase",
        ] {
            assert!(ids.iter().any(|i| i == expected), "missing {expected}");
        }
    }

    #[test]
    fn hflip_mirrors_coordinates() {
        let bank = sample_bank(5, 1);
        for (scene, query) in &bank {
            let (dual, dq) = op("hflip").apply(scene, query).unwrap();
            assert_eq!(&dq, query, "visual ops leave the query untouched");
            for (a, b) in scene.objects.iter().zip(&dual.objects) {
                assert_eq!(b.x, scene.grid_size - 1 - a.x);
                assert_eq!(b.y, a.y);
            }
        }
        // coordinate formula: (1,3) -> (6,3) on G=8
        let mut scene = bank[0].0.clone();
        scene.grid_size = 8;
        scene.objects.truncate(2);
        scene.objects[0].x = 1;
        scene.objects[0].y = 3;
        scene.objects[1].x = 5;
        scene.objects[1].y = 4;
        let (dual, _) = op("hflip").apply(&scene, &bank[0].1).unwrap();
        assert_eq!((dual.objects[0].x, dual.objects[0].y), (6, 3));
    }

    #[test]
    fn option_reverse_reverses_options() {
        let bank = sample_bank(40, 2);
        let reverse = op("option_reverse");
        for (scene, query) in &bank {
            let (ds, dq) = reverse.apply(scene, query).unwrap();
            assert_eq!(&ds, scene, "linguistic ops leave the scene untouched");
            let mut expected = query.options.clone();
            expected.reverse();
            assert_eq!(dq.options, expected);
        }
    }

    #[test]
    fn negation_toggles_flag_and_surface() {
        let bank = sample_bank(60, 3);
        let neg = op("negation");
        for (scene, query) in &bank {
            if !query.is_binary() {
                assert!(!neg.applicable(scene, query));
                continue;
            }
            let (_, dq) = neg.apply(scene, query).unwrap();
            assert_eq!(dq.negated, !query.negated);
            assert_ne!(
                crate::scene::render_text(&dq),
                crate::scene::render_text(query)
            );
        }
    }

    #[test]
    fn hflip_maps_left_to_right() {
        let bank = sample_bank(200, 4);
        let hflip = op("hflip");
        let (scene, query) = bank
            .iter()
            .find(|(_, q)| {
                q.kind == crate::scene::QueryKind::RelPosH
                    && q.options[0] == AnswerContent::Dir(Dir::Left)
            })
            .expect("bank holds a rel_pos_h query with left at position 0");
        let (_, dq) = hflip.apply(scene, query).unwrap();
        let mapped = hflip.map_answer(query, &dq, AnswerIndex(0)).unwrap();
        assert_eq!(dq.options[mapped.0], AnswerContent::Dir(Dir::Right));
    }

    #[test]
    fn option_reverse_tracks_content_through_indices() {
        let bank = sample_bank(100, 5);
        let reverse = op("option_reverse");
        for (scene, query) in &bank {
            let (_, dq) = reverse.apply(scene, query).unwrap();
            for a in 0..query.options.len() {
                let mapped = reverse.map_answer(query, &dq, AnswerIndex(a)).unwrap();
                // the mapped index must carry the same content
                assert_eq!(dq.options[mapped.0], query.options[a]);
            }
            if query.options.len() == 4 {
                let mapped = reverse.map_answer(query, &dq, AnswerIndex(1)).unwrap();
                assert_eq!(mapped.0, 2);
            }
        }
    }

    #[test]
    fn paraphrase_maps_identity() {
        let bank = sample_bank(30, 6);
        let para = op("paraphrase");
        for (scene, query) in &bank {
            let (_, dq) = para.apply(scene, query).unwrap();
            assert_eq!(
                dq.template_variant,
                (query.template_variant + 1) % TEMPLATE_VARIANTS
            );
            for a in 0..query.options.len() {
                let mapped = para.map_answer(query, &dq, AnswerIndex(a)).unwrap();
                assert_eq!(mapped.0, a);
            }
        }
    }

    #[test]
    fn grayscale_excludes_color_queries() {
        let bank = sample_bank(300, 7);
        let gray = op("grayscale");
        let mut applicable = 0;
        for (scene, query) in &bank {
            if gray.applicable(scene, query) {
                applicable += 1;
                assert!(query.is_color_free());
                let (ds, _) = gray.apply(scene, query).unwrap();
                assert!(ds.objects.iter().all(|o| o.color == Color::Gray));
            }
        }
        assert!(applicable > 0, "domain must not be empty on a mixed bank");
    }

    fn behaviorally_equal(a: &DualityOp, b: &DualityOp, bank: &[(Scene, Query)]) -> bool {
        bank.iter().all(|(scene, query)| {
            match (a.applicable(scene, query), b.applicable(scene, query)) {
                (false, false) => true,
                (true, true) => {
                    let (sa, qa) = a.apply(scene, query).unwrap();
                    let (sb, qb) = b.apply(scene, query).unwrap();
                    if sa != sb || qa != qb {
                        return false;
                    }
                    (0..query.options.len()).all(|i| {
                        a.map_answer(query, &qa, AnswerIndex(i)).unwrap()
                            == b.map_answer(query, &qb, AnswerIndex(i)).unwrap()
                    })
                }
                _ => false,
            }
        })
    }

    #[test]
    fn hflip_then_vflip_equals_rot180() {
        let bank = sample_bank(150, 8);
        let composed = compose(&op("hflip"), &op("vflip"));
        assert!(behaviorally_equal(&composed, &op("rot180"), &bank));
    }

    #[test]
    fn hflip_squared_is_identity() {
        let bank = sample_bank(150, 9);
        let twice = compose(&op("hflip"), &op("hflip"));
        for (scene, query) in &bank {
            let (ds, dq) = twice.apply(scene, query).unwrap();
            assert_eq!(&ds, scene);
            assert_eq!(&dq, query);
            for a in 0..query.options.len() {
                assert_eq!(twice.map_answer(query, &dq, AnswerIndex(a)).unwrap().0, a);
            }
        }
    }

    #[test]
    fn composed_domain_is_the_intersection() {
        let bank = sample_bank(200, 10);
        let combo = compose(&op("option_reverse"), &op("negation"));
        for (scene, query) in &bank {
            assert_eq!(combo.applicable(scene, query), query.is_binary());
        }
        assert_eq!(combo.domain_tag(), "binary");
    }

    #[test]
    fn composition_id_is_canonical() {
        let combo = compose(&op("hflip"), &op("negation"));
        assert_eq!(combo.id(), "hflip∘negation");
        // application order: negation first
        assert_eq!(combo.steps()[0], Prim::Negation);
    }

    #[test]
    fn axiom_holds_for_all_builtins() {
        let env = EnvConfig::default();
        for o in builtin_pool() {
            let report = verify_axiom(&o, 1000, &mut rng(11), &env).unwrap();
            assert!(
                report.holds(),
                "{} violated the axiom: {:?}",
                report.op_id,
                report.violations.first()
            );
            assert_eq!(report.samples_tested, 1000);
        }
    }

    #[test]
    fn axiom_holds_for_depth3_chains() {
        let env = EnvConfig::default();
        let chain = compose(&op("negation"), &compose(&op("hflip"), &op("paraphrase")));
        let report = verify_axiom(&chain, 2000, &mut rng(12), &env).unwrap();
        assert!(report.holds());
    }

    #[test]
    fn corrupted_op_violates_on_every_horizontal_question() {
        // hflip transform with identity mapping: the dual truth flips but
        // the mapped answer does not, so every rel_pos_h sample violates.
        let corrupt = op("hflip").corrupted_with_identity_mapping();
        let bank = sample_bank(400, 13);
        let horizontal: Vec<(Scene, Query)> = bank
            .into_iter()
            .filter(|(_, q)| q.kind == crate::scene::QueryKind::RelPosH)
            .collect();
        assert!(horizontal.len() > 20);
        let report = verify_axiom_on(&corrupt, &horizontal).unwrap();
        assert_eq!(report.violations.len(), report.samples_tested);
        // and the honest op is clean on the same corpus
        let clean = verify_axiom_on(&op("hflip"), &horizontal).unwrap();
        assert!(clean.holds());
    }

    #[test]
    fn map_answer_is_a_bijection() {
        let bank = sample_bank(100, 14);
        for o in builtin_pool() {
            for (scene, query) in &bank {
                if !o.applicable(scene, query) {
                    continue;
                }
                let (_, dq) = o.apply(scene, query).unwrap();
                let mut seen = vec![false; query.options.len()];
                for a in 0..query.options.len() {
                    let m = o.map_answer(query, &dq, AnswerIndex(a)).unwrap().0;
                    assert!(!seen[m], "{} maps two answers to index {m}", o.id());
                    seen[m] = true;
                }
            }
        }
    }

    #[test]
    fn compose_is_associative_behaviorally() {
        let bank = sample_bank(80, 15);
        let (a, b, c) = (op("hflip"), op("option_reverse"), op("paraphrase"));
        let left = compose(&compose(&a, &b), &c);
        let right = compose(&a, &compose(&b, &c));
        assert!(behaviorally_equal(&left, &right, &bank));
    }

    #[test]
    fn discovery_dedupes_and_respects_cap() {
        let env = EnvConfig::default();
        let ops = discover_pool(&mut rng(16), &env, 14).unwrap();
        assert!(ops.len() <= 14);
        assert!(ops.len() > 9, "discovery should add composed candidates");
        let ids: Vec<String> = ops.iter().map(|o| o.id()).collect();
        let mut dedup = ids.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), ids.len(), "duplicate ids in {ids:?}");
        // rot180 is already a builtin, so hflip∘vflip must have been
        // rejected as behaviorally equal
        assert!(!ids.iter().any(|i| i == "hflip∘vflip" || i == "vflip∘hflip"));
    }

    #[test]
    fn registry_round_trip() {
        let env = EnvConfig::default();
        let ops = discover_pool(&mut rng(17), &env, 12).unwrap();
        let entries = export_registry(&ops);
        let back = import_registry(&entries).unwrap();
        assert_eq!(ops.len(), back.len());
        for (a, b) in ops.iter().zip(&back) {
            assert_eq!(a.id(), b.id());
            assert_eq!(a.steps(), b.steps());
        }
        let json = serde_json::to_string_pretty(&entries).unwrap();
        let parsed: Vec<RegistryEntry> = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed.len(), entries.len());
    }
}
