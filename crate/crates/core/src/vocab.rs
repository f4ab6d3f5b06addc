//! Action labels, verb-synonym trees and the stochastic label sampling built
//! on top of them.
//!
//! A [`Vocabulary`] is the ordered list of root actions of one label universe
//! (base or novel) together with one [`SynonymTree`] per distinct root verb.
//! Sampling never mutates the vocabulary; every sampler takes the caller's
//! random stream.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AceError, Result};

/// Depth of the synonym trees built by this crate: root, first-order
/// synonyms and their second-order synonyms.
pub const TREE_DEPTH: usize = 2;

/// Object placeholder for verb-only datasets.
pub const OBJECT_PLACEHOLDER: &str = "ingredient";

fn normalize_phrase(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// A procedural action `verb ⊕ object`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionLabel {
    verb: String,
    object: String,
}

impl ActionLabel {
    /// Builds a label, lowercasing and collapsing whitespace in both parts.
    pub fn new(verb: &str, object: &str) -> Result<Self> {
        let verb = normalize_phrase(verb);
        let object = normalize_phrase(object);
        if verb.is_empty() || object.is_empty() {
            return Err(AceError::MalformedLabel(format!("{verb:?} + {object:?}")));
        }
        Ok(Self { verb, object })
    }

    pub fn verb(&self) -> &str {
        &self.verb
    }

    pub fn object(&self) -> &str {
        &self.object
    }

    /// Rendered label text, `verb object`.
    pub fn text(&self) -> String {
        format!("{} {}", self.verb, self.object)
    }

    /// Same object, different verb.
    pub fn with_verb(&self, verb: &str) -> Self {
        Self {
            verb: normalize_phrase(verb),
            object: self.object.clone(),
        }
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.verb, self.object)
    }
}

/// How a label is stored on disk: pre-split, or as one raw string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelRecord {
    Split { verb: String, object: String },
    Raw(String),
}

/// Known multi-word verbs ("lay down", "pick up") used to split raw labels.
#[derive(Debug, Clone, Default)]
pub struct PhrasalLexicon {
    // keyed by token count so the longest prefix is tried first
    entries: BTreeMap<usize, BTreeSet<String>>,
}

impl PhrasalLexicon {
    pub fn new<I, S>(verbs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut lex = Self::default();
        for v in verbs {
            lex.insert(v.as_ref());
        }
        lex
    }

    pub fn insert(&mut self, verb: &str) {
        let verb = normalize_phrase(verb);
        let n = verb.split(' ').count();
        if n > 1 {
            self.entries.entry(n).or_default().insert(verb);
        }
    }

    /// Collects every multi-word verb that appears in a vocabulary's actions
    /// or trees.
    pub fn from_vocabulary(vocab: &Vocabulary) -> Self {
        let mut lex = Self::default();
        for a in vocab.actions() {
            lex.insert(a.verb());
        }
        for tree in vocab.trees().values() {
            for (node, kids) in &tree.children {
                lex.insert(node);
                for k in kids {
                    lex.insert(k);
                }
            }
        }
        lex
    }

    fn longest_prefix(&self, tokens: &[&str]) -> usize {
        for (&n, verbs) in self.entries.iter().rev() {
            if n <= tokens.len() && verbs.contains(&tokens[..n].join(" ")) {
                return n;
            }
        }
        1
    }
}

/// Turns a stored label record into an [`ActionLabel`].
///
/// Raw strings split after the longest lexicon verb that prefixes them, or
/// after the first token when none does.
pub fn decompose(record: &LabelRecord, lexicon: &PhrasalLexicon) -> Result<ActionLabel> {
    match record {
        LabelRecord::Split { verb, object } => ActionLabel::new(verb, object),
        LabelRecord::Raw(raw) => {
            let norm = normalize_phrase(raw);
            let tokens: Vec<&str> = norm.split(' ').filter(|t| !t.is_empty()).collect();
            if tokens.len() < 2 {
                return Err(AceError::MalformedLabel(raw.clone()));
            }
            let n = lexicon.longest_prefix(&tokens);
            if n == tokens.len() {
                return Err(AceError::MalformedLabel(raw.clone()));
            }
            ActionLabel::new(&tokens[..n].join(" "), &tokens[n..].join(" "))
        }
    }
}

/// Splits `text` against a known object suffix, falling back to
/// [`decompose`] when the suffix does not match.
pub fn decompose_with_object(text: &str, object: &str, lexicon: &PhrasalLexicon) -> Result<ActionLabel> {
    let norm = normalize_phrase(text);
    let object = normalize_phrase(object);
    if let Some(verb) = norm.strip_suffix(&object) {
        let verb = verb.trim_end();
        if !verb.is_empty() && norm.len() > object.len() && norm.as_bytes()[verb.len()] == b' ' {
            return ActionLabel::new(verb, &object);
        }
    }
    decompose(&LabelRecord::Raw(norm), lexicon)
}

/// Verb-synonym tree rooted at one action verb.
///
/// `children[node]` lists the node's children in file order, the node itself
/// included. The root's list holds the first-order synonyms; each first-order
/// node may carry its own list of second-order synonyms. Because nodes are
/// keyed by name, the replicated root shares its children list with the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynonymTree {
    root: String,
    children: IndexMap<String, Vec<String>>,
}

impl SynonymTree {
    pub fn new(root: &str, children: IndexMap<String, Vec<String>>) -> Result<Self> {
        let tree = Self {
            root: root.to_string(),
            children,
        };
        let problems = tree.violations();
        if problems.is_empty() {
            Ok(tree)
        } else {
            Err(AceError::InvalidTree(format!("{root}: {}", problems.join("; "))))
        }
    }

    /// A tree whose only child is the replicated root.
    pub fn root_only(root: &str) -> Self {
        let root = normalize_phrase(root);
        let mut children = IndexMap::new();
        children.insert(root.clone(), vec![root.clone()]);
        Self { root, children }
    }

    /// Builds a tree from first-order synonyms and, per synonym, its own
    /// synonyms. Parent replication and within-parent deduplication are
    /// applied here; the root is appended last when missing.
    pub fn from_synonyms(
        root: &str,
        first_order: &[String],
        second_order: &IndexMap<String, Vec<String>>,
    ) -> Result<Self> {
        let root = normalize_phrase(root);
        let mut children = IndexMap::new();
        let level1 = replicate(&root, first_order);
        for node in &level1 {
            if node == &root {
                continue;
            }
            if let Some(syns) = second_order.get(node) {
                children.insert(node.clone(), replicate(node, syns));
            }
        }
        children.insert(root.clone(), level1);
        children.move_index(children.len() - 1, 0);
        Self::new(&root, children)
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn nodes(&self) -> &IndexMap<String, Vec<String>> {
        &self.children
    }

    /// Children of `node`, replicated parent included.
    pub fn children_of(&self, node: &str) -> Result<&[String]> {
        self.children
            .get(node)
            .map(Vec::as_slice)
            .ok_or_else(|| AceError::NodeNotFound {
                root: self.root.clone(),
                node: node.to_string(),
            })
    }

    /// First-order children of the root (the set `v⁺` of the root verb).
    pub fn first_order(&self) -> &[String] {
        &self.children[&self.root]
    }

    /// Children count per level: `[m1]` for depth-one trees, `[m1, m2]`
    /// otherwise.
    pub fn m_per_level(&self) -> Vec<usize> {
        let m1 = self.first_order().len();
        let second = self
            .first_order()
            .iter()
            .filter(|n| **n != self.root)
            .find_map(|n| self.children.get(n))
            .map(Vec::len);
        match second {
            Some(m2) => vec![m1, m2],
            None => vec![m1],
        }
    }

    /// Every invariant violation, as human-readable messages.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let root = &self.root;
        if root.is_empty() {
            out.push("empty root verb".to_string());
            return out;
        }
        let Some(first) = self.children.get(root) else {
            out.push(format!("root {root:?} has no children entry"));
            return out;
        };
        for (node, kids) in &self.children {
            if node.is_empty() || *node != normalize_phrase(node) {
                out.push(format!("node {node:?} is not a lowercase verb token"));
            }
            if !kids.contains(node) {
                out.push(format!("parent {node:?} is not replicated among its children"));
            }
            let mut seen = BTreeSet::new();
            for k in kids {
                if k.is_empty() || *k != normalize_phrase(k) {
                    out.push(format!("child {k:?} of {node:?} is not a lowercase verb token"));
                }
                if !seen.insert(k) {
                    out.push(format!("duplicate child {k:?} under {node:?}"));
                }
            }
            if node != root && !first.contains(node) {
                out.push(format!(
                    "node {node:?} is not a first-order child of {root:?}; trees are limited to depth {TREE_DEPTH}"
                ));
            }
        }
        let non_root: Vec<&String> = first.iter().filter(|n| *n != root).collect();
        let with_kids = non_root.iter().filter(|n| self.children.contains_key(**n)).count();
        if with_kids != 0 && with_kids != non_root.len() {
            out.push(format!(
                "{with_kids} of {} first-order nodes have children; expected all or none",
                non_root.len()
            ));
        }
        let mut counts: BTreeSet<usize> = BTreeSet::new();
        for n in &non_root {
            if let Some(k) = self.children.get(*n) {
                counts.insert(k.len());
            }
        }
        if counts.len() > 1 {
            out.push(format!("second-level children counts differ: {counts:?}"));
        }
        out
    }
}

fn replicate(parent: &str, synonyms: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(synonyms.len() + 1);
    for s in synonyms.iter().map(|s| normalize_phrase(s)) {
        if !s.is_empty() && !out.contains(&s) {
            out.push(s);
        }
    }
    if !out.iter().any(|s| s == parent) {
        out.push(parent.to_string());
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ActionRecord {
    verb: String,
    object: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TreeRecord {
    children: IndexMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabFile {
    actions: Vec<ActionRecord>,
    trees: IndexMap<String, TreeRecord>,
}

/// Root actions of one label universe plus their synonym trees.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    actions: Vec<ActionLabel>,
    trees: IndexMap<String, SynonymTree>,
    verb_index: IndexMap<String, Vec<usize>>,
    // per action: shadow-negative verb pool, sorted
    negative_pools: Vec<Vec<String>>,
}

impl Vocabulary {
    /// Builds a vocabulary. Every action verb must have a tree; trees for
    /// verbs no action uses are dropped.
    pub fn new(actions: Vec<ActionLabel>, mut trees: IndexMap<String, SynonymTree>) -> Result<Self> {
        if actions.is_empty() {
            return Err(AceError::SchemaError("vocabulary has no actions".into()));
        }
        let mut verb_index: IndexMap<String, Vec<usize>> = IndexMap::new();
        for (i, a) in actions.iter().enumerate() {
            verb_index.entry(a.verb().to_string()).or_default().push(i);
        }
        for verb in verb_index.keys() {
            match trees.get(verb) {
                None => return Err(AceError::SchemaError(format!("no synonym tree for verb {verb:?}"))),
                Some(t) if t.root() != verb => {
                    return Err(AceError::SchemaError(format!(
                        "tree keyed {verb:?} is rooted at {:?}",
                        t.root()
                    )))
                }
                Some(_) => {}
            }
        }
        trees.retain(|k, _| verb_index.contains_key(k));
        // keep tree order aligned with first appearance of the verb
        trees.sort_by(|a, _, b, _| verb_index.get_index_of(a).cmp(&verb_index.get_index_of(b)));
        let negative_pools = actions
            .iter()
            .map(|a| {
                let own: BTreeSet<&String> = trees[a.verb()].first_order().iter().collect();
                let mut pool = BTreeSet::new();
                for t in trees.values() {
                    for v in t.first_order() {
                        if !own.contains(v) {
                            pool.insert(v.clone());
                        }
                    }
                }
                pool.into_iter().collect()
            })
            .collect();
        Ok(Self {
            actions,
            trees,
            verb_index,
            negative_pools,
        })
    }

    /// A vocabulary with root-only trees: no synonyms, no augmentation.
    pub fn from_roots(actions: Vec<ActionLabel>) -> Result<Self> {
        let trees = actions
            .iter()
            .map(|a| (a.verb().to_string(), SynonymTree::root_only(a.verb())))
            .collect();
        Self::new(actions, trees)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn actions(&self) -> &[ActionLabel] {
        &self.actions
    }

    pub fn action(&self, i: usize) -> &ActionLabel {
        &self.actions[i]
    }

    pub fn trees(&self) -> &IndexMap<String, SynonymTree> {
        &self.trees
    }

    pub fn tree_for(&self, action_index: usize) -> &SynonymTree {
        &self.trees[self.actions[action_index].verb()]
    }

    /// Root verb → indices of the actions that share it.
    pub fn verb_index(&self) -> &IndexMap<String, Vec<usize>> {
        &self.verb_index
    }

    /// Index of the action whose rendered text equals `text`.
    pub fn position(&self, label: &ActionLabel) -> Option<usize> {
        self.actions.iter().position(|a| a == label)
    }

    /// Children used to leaf-average a label whose verb is `verb`.
    ///
    /// Looks in the action's own tree first, then in every other tree in
    /// vocabulary order. `None` means the verb is a leaf everywhere.
    pub fn children_for(&self, action_index: usize, verb: &str) -> Option<&[String]> {
        let own = self.tree_for(action_index);
        if let Ok(kids) = own.children_of(verb) {
            return Some(kids);
        }
        self.trees.values().find_map(|t| t.children_of(verb).ok())
    }

    /// Shadow-negative verb pool of action `i`: first-order children of every
    /// tree that are not first-order children of the action's own tree.
    pub fn negative_pool(&self, i: usize) -> Result<&[String]> {
        if i >= self.actions.len() {
            return Err(AceError::ConfigError(format!(
                "action index {i} out of range for {} actions",
                self.actions.len()
            )));
        }
        let pool = &self.negative_pools[i];
        if pool.is_empty() {
            return Err(AceError::EmptyNegativePool(self.actions[i].text()));
        }
        Ok(pool)
    }

    /// Checks the extra conditions training needs: at least two actions and
    /// a non-empty negative pool for each of them.
    pub fn validate_for_training(&self) -> Result<()> {
        if self.actions.len() < 2 {
            return Err(AceError::SchemaError(format!(
                "training needs at least 2 actions, got {}",
                self.actions.len()
            )));
        }
        for i in 0..self.actions.len() {
            self.negative_pool(i)?;
        }
        Ok(())
    }

    /// Draws `ã⁺`: one first-order synonym per distinct root verb, shared by
    /// every action with that verb, each drawn uniformly.
    pub fn sample_positive_labels<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<ActionLabel> {
        let mut out = self.actions.clone();
        for (verb, idx) in &self.verb_index {
            let kids = self.trees[verb].first_order();
            let pick = &kids[rng.random_range(0..kids.len())];
            for &i in idx {
                out[i] = self.actions[i].with_verb(pick);
            }
        }
        out
    }

    /// Draws one first-order synonym per action, independently for every
    /// action even when actions share a verb. Used to generate test-time
    /// synonym sets.
    pub fn sample_positive_labels_independent<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<ActionLabel> {
        self.actions
            .iter()
            .map(|a| {
                let kids = self.trees[a.verb()].first_order();
                a.with_verb(&kids[rng.random_range(0..kids.len())])
            })
            .collect()
    }

    /// Draws `ã⁻`: for each action a verb from its negative pool, paired with
    /// the action's own object.
    pub fn sample_shadow_negatives<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<ActionLabel>> {
        let mut out = Vec::with_capacity(self.actions.len());
        for (i, a) in self.actions.iter().enumerate() {
            let pool = self.negative_pool(i)?;
            out.push(a.with_verb(&pool[rng.random_range(0..pool.len())]));
        }
        Ok(out)
    }

    /// Keeps the first `m_per_level[0]` first-order children and the first
    /// `m_per_level[1]` second-order children of every tree, replicated
    /// parents always included. Trees already smaller are left as they are.
    pub fn truncated(&self, m_per_level: &[usize]) -> Result<Self> {
        if m_per_level.is_empty() || m_per_level.len() > TREE_DEPTH || m_per_level.contains(&0) {
            return Err(AceError::ConfigError(format!(
                "m_per_level must hold 1..={TREE_DEPTH} positive counts, got {m_per_level:?}"
            )));
        }
        let keep = |parent: &str, kids: &[String], m: usize| -> Vec<String> {
            let mut out: Vec<String> = kids.iter().filter(|k| *k != parent).take(m - 1).cloned().collect();
            let pos = kids
                .iter()
                .position(|k| k == parent)
                .unwrap_or(kids.len())
                .min(out.len());
            out.insert(pos, parent.to_string());
            out
        };
        let mut trees = IndexMap::new();
        for (root, tree) in &self.trees {
            let first = keep(root, tree.first_order(), m_per_level[0]);
            let mut children = IndexMap::new();
            for (node, kids) in &tree.children {
                if node == root {
                    children.insert(node.clone(), first.clone());
                } else if first.contains(node) {
                    if let Some(&m2) = m_per_level.get(1) {
                        children.insert(node.clone(), keep(node, kids, m2));
                    }
                }
            }
            trees.insert(root.clone(), SynonymTree::new(root, children)?);
        }
        Self::new(self.actions.clone(), trees)
    }

    /// Sub-vocabulary over the given action indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut actions = Vec::with_capacity(indices.len());
        for &i in indices {
            let a = self
                .actions
                .get(i)
                .ok_or_else(|| AceError::SchemaError(format!("action index {i} out of range")))?;
            actions.push(a.clone());
        }
        Self::new(actions, self.trees.clone())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(s)?;
        let actions = file
            .actions
            .iter()
            .map(|r| ActionLabel::new(&r.verb, &r.object))
            .collect::<Result<Vec<_>>>()?;
        let mut trees = IndexMap::new();
        for (root, rec) in file.trees {
            let tree = SynonymTree::new(&root, rec.children)?;
            trees.insert(root, tree);
        }
        Self::new(actions, trees)
    }

    /// Canonical JSON rendering; `from_json_str(to_json_string())` is exact.
    pub fn to_json_string(&self) -> String {
        let file = VocabFile {
            actions: self
                .actions
                .iter()
                .map(|a| ActionRecord {
                    verb: a.verb.clone(),
                    object: a.object.clone(),
                })
                .collect(),
            trees: self
                .trees
                .iter()
                .map(|(k, t)| {
                    (
                        k.clone(),
                        TreeRecord {
                            children: t.children.clone(),
                        },
                    )
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("vocabulary serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AceError::IngestError {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json_string().as_bytes()))
    }
}

/// One invariant violation found in a vocabulary file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub line: Option<usize>,
    pub message: String,
}

/// Result of validating a vocabulary file without building it.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub file: String,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "{}: ok", self.file);
        }
        for v in &self.violations {
            match v.line {
                Some(l) => writeln!(f, "{}:{}: {}", self.file, l, v.message)?,
                None => writeln!(f, "{}: {}", self.file, v.message)?,
            }
        }
        Ok(())
    }
}

fn line_of(text: &str, needle: &str) -> Option<usize> {
    let quoted = format!("\"{needle}\"");
    text.lines().position(|l| l.contains(&quoted)).map(|i| i + 1)
}

/// Validates vocabulary JSON text, collecting every violation with the line
/// of the first mention of the offending node where one can be found.
pub fn validate_vocab_text(file: &str, text: &str) -> ValidationReport {
    let mut report = ValidationReport {
        file: file.to_string(),
        violations: Vec::new(),
    };
    let parsed: VocabFile = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => {
            report.violations.push(Violation {
                line: Some(e.line()),
                message: e.to_string(),
            });
            return report;
        }
    };
    let mut push = |line, message| report.violations.push(Violation { line, message });
    let mut actions = Vec::new();
    for r in &parsed.actions {
        match ActionLabel::new(&r.verb, &r.object) {
            Ok(a) => actions.push(a),
            Err(e) => push(line_of(text, &r.verb), e.to_string()),
        }
    }
    let mut trees = IndexMap::new();
    for (root, rec) in &parsed.trees {
        let tree = SynonymTree {
            root: root.clone(),
            children: rec.children.clone(),
        };
        let problems = tree.violations();
        if problems.is_empty() {
            trees.insert(root.clone(), tree);
        }
        for p in problems {
            push(line_of(text, root), format!("tree {root:?}: {p}"));
        }
    }
    if actions.len() < 2 {
        push(None, format!("expected at least 2 actions, found {}", actions.len()));
    }
    for a in &actions {
        if !parsed.trees.contains_key(a.verb()) {
            push(
                line_of(text, a.verb()),
                format!("no synonym tree for verb {:?}", a.verb()),
            );
        }
    }
    if report.violations.is_empty() {
        match Vocabulary::new(actions, trees) {
            Ok(v) => {
                for i in 0..v.len() {
                    if let Err(e) = v.negative_pool(i) {
                        report.violations.push(Violation {
                            line: line_of(text, v.action(i).verb()),
                            message: e.to_string(),
                        });
                    }
                }
            }
            Err(e) => report.violations.push(Violation {
                line: None,
                message: e.to_string(),
            }),
        }
    }
    report
}


#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_construction() {
        let a = decompose(
            &LabelRecord::Split {
                verb: "spin".into(),
                object: "block".into(),
            },
            &PhrasalLexicon::default(),
        )
        .unwrap();
        assert_eq!(a, ActionLabel::new("spin", "block").unwrap());
        assert_eq!(a.text(), "spin block");
    }

    #[test]
    fn raw_split_uses_phrasal_lexicon() {
        let lex = PhrasalLexicon::new(["lay down"]);
        let a = decompose(&LabelRecord::Raw("lay down shelf".into()), &lex).unwrap();
        assert_eq!((a.verb(), a.object()), ("lay down", "shelf"));
    }

    #[test]
    fn raw_split_defaults_to_first_token() {
        let a = decompose(&LabelRecord::Raw("push table top".into()), &PhrasalLexicon::default()).unwrap();
        assert_eq!((a.verb(), a.object()), ("push", "table top"));
    }

    #[test]
    fn malformed_raw_labels() {
        let lex = PhrasalLexicon::new(["lay down"]);
        for raw in ["", "   ", "spin", "lay down"] {
            assert!(matches!(
                decompose(&LabelRecord::Raw(raw.into()), &lex),
                Err(AceError::MalformedLabel(_))
            ));
        }
        assert!(ActionLabel::new("", "block").is_err());
    }

    #[test]
    fn object_suffix_split() {
        let lex = PhrasalLexicon::default();
        let a = decompose_with_object("set down table top", "table top", &lex).unwrap();
        assert_eq!((a.verb(), a.object()), ("set down", "table top"));
        // "ditch item" against a different object falls back to first token
        let b = decompose_with_object("ditch item", "part", &lex).unwrap();
        assert_eq!((b.verb(), b.object()), ("ditch", "item"));
    }

    #[test]
    fn children_include_replicated_parent() {
        let t = tree("spin", &[("spin", &["rotate", "spin"])]);
        assert_eq!(t.children_of("spin").unwrap(), ["rotate", "spin"]);
        let f = tree(
            "fasten",
            &[("fasten", &["secure", "fasten"]), ("secure", &["lock", "secure"])],
        );
        assert!(f.children_of("fasten").unwrap().contains(&"fasten".to_string()));
        assert_eq!(f.m_per_level(), vec![2, 2]);
    }

    #[test]
    fn unknown_node() {
        let t = tree("spin", &[("spin", &["rotate", "spin"])]);
        assert!(matches!(t.children_of("pound"), Err(AceError::NodeNotFound { .. })));
    }

    #[test]
    fn tree_violations() {
        let mk = |nodes: &[(&str, &[&str])]| {
            let children = nodes
                .iter()
                .map(|(n, k)| (n.to_string(), k.iter().map(|s| s.to_string()).collect()))
                .collect();
            SynonymTree::new("spin", children)
        };
        // parent not replicated
        assert!(mk(&[("spin", &["rotate", "turn"])]).is_err());
        // duplicate child
        assert!(mk(&[("spin", &["rotate", "rotate", "spin"])]).is_err());
        // uneven second level
        assert!(mk(&[
            ("spin", &["rotate", "turn", "spin"]),
            ("rotate", &["revolve", "rotate"]),
            ("turn", &["twist", "swivel", "turn"]),
        ])
        .is_err());
        // depth three
        assert!(mk(&[
            ("spin", &["rotate", "spin"]),
            ("rotate", &["revolve", "rotate"]),
            ("revolve", &["orbit", "revolve"]),
        ])
        .is_err());
        // uppercase
        assert!(mk(&[("spin", &["Rotate", "spin"])]).is_err());
    }

    #[test]
    fn from_synonyms_replicates_and_dedups() {
        let mut second = IndexMap::new();
        second.insert("rotate".to_string(), vec!["revolve".to_string(), "Revolve".to_string()]);
        let t = SynonymTree::from_synonyms("spin", &["rotate".to_string()], &second).unwrap();
        assert_eq!(t.first_order(), ["rotate", "spin"]);
        assert_eq!(t.children_of("rotate").unwrap(), ["revolve", "rotate"]);
        assert_eq!(t.nodes().get_index(0).unwrap().0, "spin");
    }

    #[test]
    fn negative_pool_toy() {
        let v = toy_vocab();
        assert_eq!(v.negative_pool(0).unwrap(), ["hammer", "pound"]);
        assert_eq!(v.negative_pool(1).unwrap(), ["rotate", "spin"]);
    }

    #[test]
    fn single_action_pool_is_empty() {
        let actions = vec![ActionLabel::new("spin", "block").unwrap()];
        let mut trees = IndexMap::new();
        trees.insert("spin".to_string(), tree("spin", &[("spin", &["rotate", "spin"])]));
        let v = Vocabulary::new(actions, trees).unwrap();
        assert!(matches!(v.negative_pool(0), Err(AceError::EmptyNegativePool(_))));
        assert!(v.validate_for_training().is_err());
    }

    #[test]
    fn shared_child_excluded_from_both_pools() {
        let actions = vec![
            ActionLabel::new("spin", "block").unwrap(),
            ActionLabel::new("twist", "cap").unwrap(),
        ];
        let mut trees = IndexMap::new();
        trees.insert("spin".into(), tree("spin", &[("spin", &["turn", "rotate", "spin"])]));
        trees.insert("twist".into(), tree("twist", &[("twist", &["turn", "wring", "twist"])]));
        let v = Vocabulary::new(actions, trees).unwrap();
        assert_eq!(v.negative_pool(0).unwrap(), ["twist", "wring"]);
        assert_eq!(v.negative_pool(1).unwrap(), ["rotate", "spin"]);
    }

    #[test]
    fn root_only_sampling_is_degenerate() {
        let v = Vocabulary::from_roots(vec![
            ActionLabel::new("spin", "block").unwrap(),
            ActionLabel::new("hammer", "pin").unwrap(),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            assert_eq!(v.sample_positive_labels(&mut rng), v.actions());
        }
    }

    #[test]
    fn shared_verb_gets_shared_synonym() {
        let actions = vec![
            ActionLabel::new("pick up", "item").unwrap(),
            ActionLabel::new("pick up", "box").unwrap(),
            ActionLabel::new("drop", "item").unwrap(),
        ];
        let mut trees = IndexMap::new();
        trees.insert(
            "pick up".into(),
            tree("pick up", &[("pick up", &["grab", "lift", "take", "pick up"])]),
        );
        trees.insert("drop".into(), tree("drop", &[("drop", &["release", "drop"])]));
        let v = Vocabulary::new(actions, trees).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut differed = false;
        for _ in 0..200 {
            let s = v.sample_positive_labels(&mut rng);
            assert_eq!(s[0].verb(), s[1].verb());
            assert_eq!(s[1].object(), "box");
            let t = v.sample_positive_labels_independent(&mut rng);
            differed |= t[0].verb() != t[1].verb();
        }
        assert!(differed, "independent sampling never split the shared verb");
    }

    #[test]
    fn shadow_negatives_keep_object() {
        let v = toy_vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let neg = v.sample_shadow_negatives(&mut rng).unwrap();
            for (i, n) in neg.iter().enumerate() {
                assert_eq!(n.object(), v.action(i).object());
                assert!(!v.tree_for(i).first_order().contains(&n.verb().to_string()));
            }
        }
    }

    #[test]
    fn truncation_keeps_replicated_parents() {
        let f = tree(
            "fasten",
            &[
                ("fasten", &["secure", "attach", "fasten", "fix"]),
                ("secure", &["lock", "bolt", "secure"]),
                ("attach", &["join", "secure", "attach"]),
                ("fix", &["pin", "clamp", "fix"]),
            ],
        );
        let mut trees = IndexMap::new();
        trees.insert("fasten".to_string(), f);
        trees.insert("spin".to_string(), tree("spin", &[("spin", &["rotate", "spin"])]));
        let v = Vocabulary::new(
            vec![
                ActionLabel::new("fasten", "lid").unwrap(),
                ActionLabel::new("spin", "top").unwrap(),
            ],
            trees,
        )
        .unwrap();
        let t = v.truncated(&[3, 2]).unwrap();
        let ft = t.tree_for(0);
        assert_eq!(ft.first_order(), ["secure", "attach", "fasten"]);
        assert_eq!(ft.children_of("secure").unwrap(), ["lock", "secure"]);
        assert!(ft.children_of("fix").is_err());
        assert_eq!(t.tree_for(1).first_order(), ["rotate", "spin"]);
        let one = v.truncated(&[1]).unwrap();
        assert_eq!(one.tree_for(0).first_order(), ["fasten"]);
        assert_eq!(one.tree_for(0).m_per_level(), vec![1]);
        assert!(v.truncated(&[0]).is_err());
    }

    #[test]
    fn json_round_trip_is_byte_exact() {
        let v = toy_vocab();
        let s = v.to_json_string();
        let back = Vocabulary::from_json_str(&s).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_json_string(), s);
    }

    #[test]
    fn validation_report_has_lines() {
        let text = r#"{
  "actions": [
    {"verb": "spin", "object": "block"},
    {"verb": "hammer", "object": "pin"}
  ],
  "trees": {
    "spin": {"children": {"spin": ["rotate", "turn"]}}
  }
}"#;
        let r = validate_vocab_text("v.json", text);
        assert!(!r.is_ok());
        let msgs = r.to_string();
        assert!(msgs.contains("not replicated"), "{msgs}");
        assert!(msgs.contains("no synonym tree for verb \"hammer\""), "{msgs}");
        assert!(r.violations.iter().all(|v| v.line.is_some()));
        assert!(validate_vocab_text("ok.json", &toy_vocab().to_json_string()).is_ok());
    }
}
