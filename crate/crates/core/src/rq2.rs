//! Recursive masking for multi-token noun phrases.
//!
//! The prompt's mask is filled once; every candidate that is not gendered is
//! then re-queried with a fresh mask placed directly before it, so the model
//! can supply a modifier ("friend" -> "<mask> friend" -> "female friend").
//! A phrase's probability is the product of the conditional scores along its
//! path, and only leaves contribute to the aggregate.
//!
//! First-fill candidates at or below the floor are dropped, exactly as in
//! single-token scoring. Deeper candidates at or below the floor stay in the
//! tree as pruned leaves: their mass counts as unspecified unless the pruned
//! token itself is gendered, in which case it counts nowhere.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::backend::{FillMaskBackend, MaskFillRequest};
use crate::error::PromptError;
use crate::exec::Execution;
use crate::lexicon::{surface_form, GenderLabel, GenderLexicon};
use crate::prompts::{expand, DiagnosisSet, DiagnosisSetName, PromptInstance, PromptTemplate};
use crate::rq1::GenderScores;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionParams {
    /// Number of modifier rounds after the first fill.
    pub max_depth: usize,
    /// Candidates requested per query.
    pub beam: usize,
    /// Nodes whose joint probability is not strictly above this are pruned.
    pub floor: f64,
}

impl Default for ExpansionParams {
    fn default() -> Self {
        Self {
            max_depth: 3,
            beam: 10,
            floor: crate::rq1::DEFAULT_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeStatus {
    /// Unspecified and shallow enough to be queried again.
    Expandable,
    LeafGendered,
    LeafDepth,
    LeafPruned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseNode {
    /// Raw tokens in sentence order; `tokens[0]` is the newest.
    pub tokens: Vec<String>,
    pub joint_prob: f64,
    /// 0 for the first fill, +1 per modifier round.
    pub depth: usize,
    pub status: NodeStatus,
    pub children: Vec<PhraseNode>,
}

impl PhraseNode {
    /// Tokens joined as they appear in the sentence.
    pub fn phrase(&self) -> String {
        phrase_text(&self.tokens)
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn visit_leaves<'a>(&'a self, f: &mut impl FnMut(&'a PhraseNode)) {
        if self.children.is_empty() {
            f(self);
        }
        for c in &self.children {
            c.visit_leaves(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseTree {
    pub template_id: String,
    pub diagnosis: String,
    /// Prompt text with the backend's mask token.
    pub text: String,
    pub roots: Vec<PhraseNode>,
}

impl PhraseTree {
    pub fn leaves(&self) -> Vec<&PhraseNode> {
        let mut out = Vec::new();
        for r in &self.roots {
            r.visit_leaves(&mut |n| out.push(n));
        }
        out
    }
}

fn phrase_text(tokens: &[String]) -> String {
    tokens
        .iter()
        .map(|t| surface_form(t))
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Builds the query that asks for a modifier in front of `tokens`.
fn query_text(prefix: &str, mask: &str, tokens: &[String], suffix: &str) -> String {
    let phrase = phrase_text(tokens);
    if phrase.is_empty() {
        format!("{prefix}{mask}{suffix}")
    } else {
        format!("{prefix}{mask} {phrase}{suffix}")
    }
}

struct Expander<'a, B: ?Sized> {
    backend: &'a B,
    lex: &'a GenderLexicon,
    params: ExpansionParams,
    prefix: &'a str,
    suffix: &'a str,
    mask: &'a str,
    prompt: &'a PromptInstance,
}

impl<B: FillMaskBackend + ?Sized> Expander<'_, B> {
    fn children(
        &self,
        parent_tokens: &[String],
        parent_prob: f64,
        depth: usize,
    ) -> Result<Vec<PhraseNode>, PromptError> {
        let text = query_text(self.prefix, self.mask, parent_tokens, self.suffix);
        let resp = self
            .backend
            .fill_mask(&MaskFillRequest::new(text, self.params.beam))
            .map_err(|source| PromptError {
                template_id: self.prompt.template_id.clone(),
                diagnosis: self.prompt.diagnosis.clone(),
                phrase: (!parent_tokens.is_empty()).then(|| phrase_text(parent_tokens)),
                source: Box::new(source),
            })?;
        let mut out = Vec::with_capacity(resp.candidates.len());
        for c in resp.candidates.iter().filter(|c| c.score > 0.0) {
            let joint_prob = parent_prob * c.score;
            if depth == 0 && joint_prob <= self.params.floor {
                continue;
            }
            let mut tokens = Vec::with_capacity(parent_tokens.len() + 1);
            tokens.push(c.token_str.clone());
            tokens.extend_from_slice(parent_tokens);
            let status = if joint_prob <= self.params.floor {
                NodeStatus::LeafPruned
            } else if self.lex.classify(&c.token_str) != GenderLabel::Unspecified {
                NodeStatus::LeafGendered
            } else if depth >= self.params.max_depth {
                NodeStatus::LeafDepth
            } else {
                NodeStatus::Expandable
            };
            let children = if status == NodeStatus::Expandable {
                self.children(&tokens, joint_prob, depth + 1)?
            } else {
                Vec::new()
            };
            out.push(PhraseNode {
                tokens,
                joint_prob,
                depth,
                status,
                children,
            });
        }
        Ok(out)
    }
}

/// Grows the phrase tree for one prompt.
pub fn expand_phrases<B: FillMaskBackend + ?Sized>(
    p: &PromptInstance,
    backend: &B,
    lex: &GenderLexicon,
    params: ExpansionParams,
) -> Result<PhraseTree, PromptError> {
    let desc = backend.describe().map_err(|source| PromptError {
        template_id: p.template_id.clone(),
        diagnosis: p.diagnosis.clone(),
        phrase: None,
        source: Box::new(source),
    })?;
    let (prefix, suffix) = p.split_at_mask();
    let expander = Expander {
        backend,
        lex,
        params,
        prefix,
        suffix,
        mask: &desc.mask_token,
        prompt: p,
    };
    let roots = expander.children(&[], 1.0, 0)?;
    Ok(PhraseTree {
        template_id: p.template_id.clone(),
        diagnosis: p.diagnosis.clone(),
        text: query_text(prefix, &desc.mask_token, &[], suffix),
        roots,
    })
}

/// Aggregate of a phrase tree plus diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PhraseScores {
    pub scores: GenderScores,
    /// Leaves that contributed to some bucket.
    pub leaf_count: usize,
    /// Leaves whose tokens carry both a female and a male word.
    pub conflicts: usize,
    /// Mass of pruned leaves that ended on a gendered token.
    pub pruned_mass: f64,
}

/// Sums leaf probabilities into gender buckets.
///
/// A leaf's gender is the single gender found among its tokens. Pruned
/// leaves count as unspecified when none of their tokens is gendered and
/// toward no bucket otherwise. Leaves mixing female and male words are
/// reported as conflicts.
pub fn aggregate_phrase_scores(tree: &PhraseTree, lex: &GenderLexicon) -> PhraseScores {
    let mut out = PhraseScores::default();
    for leaf in tree.leaves() {
        let genders: BTreeSet<_> = leaf
            .tokens
            .iter()
            .map(|t| lex.classify(t))
            .filter(|g| *g != GenderLabel::Unspecified)
            .map(|g| g.short())
            .collect();
        if leaf.status == NodeStatus::LeafPruned && !genders.is_empty() {
            out.pruned_mass += leaf.joint_prob;
            continue;
        }
        let label = match genders.len() {
            0 => GenderLabel::Unspecified,
            1 if genders.contains("F") => GenderLabel::Female,
            1 => GenderLabel::Male,
            _ => {
                out.conflicts += 1;
                continue;
            }
        };
        out.scores.add(label, leaf.joint_prob);
        out.leaf_count += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq2Row {
    pub template_id: String,
    pub dimension: String,
    pub reverse_coded: bool,
    pub diagnosis_set: DiagnosisSetName,
    pub diagnosis: String,
    pub text: String,
    pub model_id: String,
    pub p_female: f64,
    pub p_male: f64,
    pub p_unspecified: f64,
    pub disparity: f64,
    pub leaf_count: usize,
    pub conflicts: usize,
}

impl Rq2Row {
    pub fn scores(&self) -> GenderScores {
        GenderScores {
            p_female: self.p_female,
            p_male: self.p_male,
            p_unspecified: self.p_unspecified,
            disparity: self.disparity,
        }
    }
}

/// Like [`run_rq2`] but also returns each prompt's tree.
pub fn run_rq2_with_trees<B: FillMaskBackend + ?Sized>(
    templates: &[PromptTemplate],
    dset: &DiagnosisSet,
    backend: &B,
    lex: &GenderLexicon,
    params: ExpansionParams,
    exec: Execution,
) -> Result<Vec<(Rq2Row, PhraseTree)>, PromptError> {
    let desc = backend.describe().map_err(|source| PromptError {
        template_id: "-".into(),
        diagnosis: "-".into(),
        phrase: None,
        source: Box::new(source),
    })?;
    let instances = expand(templates, dset);
    exec.try_map(&instances, |p| {
        let tree = expand_phrases(p, backend, lex, params)?;
        let agg = aggregate_phrase_scores(&tree, lex);
        let row = Rq2Row {
            template_id: p.template_id.clone(),
            dimension: p.meta.as_str().to_string(),
            reverse_coded: p.reverse_coded,
            diagnosis_set: p.diagnosis_set,
            diagnosis: p.diagnosis.clone(),
            text: p.rendered_text.clone(),
            model_id: desc.model_id.clone(),
            p_female: agg.scores.p_female,
            p_male: agg.scores.p_male,
            p_unspecified: agg.scores.p_unspecified,
            disparity: agg.scores.disparity,
            leaf_count: agg.leaf_count,
            conflicts: agg.conflicts,
        };
        Ok((row, tree))
    })
}

/// One row per (template, diagnosis), in expansion order.
pub fn run_rq2<B: FillMaskBackend + ?Sized>(
    templates: &[PromptTemplate],
    dset: &DiagnosisSet,
    backend: &B,
    lex: &GenderLexicon,
    params: ExpansionParams,
    exec: Execution,
) -> Result<Vec<Rq2Row>, PromptError> {
    Ok(
        run_rq2_with_trees(templates, dset, backend, lex, params, exec)?
            .into_iter()
            .map(|(row, _)| row)
            .collect(),
    )
}
