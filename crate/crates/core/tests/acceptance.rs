//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::statistics::Statistics;

use stigma_probe::backend::{
    BackendDescriptor, BackendError, FillMaskBackend, MaskFillRequest, MaskFillResponse,
};
use stigma_probe::prompts::{builtin_rq1_templates, builtin_rq2_templates, expand};
use stigma_probe::rq2::ExpansionParams;
use stigma_probe::{
    aggregate_phrase_scores, aggregate_scores, expand_phrases, independent_t, paired_t,
    t_sf_two_sided, DiagnosisSet, GenderLabel, GenderLexicon, MaskFillCandidate, PromptInstance,
};

/// Tolerances and sizes pinned by the criteria.
const LEXICON_BUDGET: Duration = Duration::from_secs(1);
const AGGREGATION_CASES: usize = 250;
const CONSERVATION_TOL: f64 = 1e-12;
const RECURSIVE_BACKENDS: usize = 50;
const RECURSIVE_TOL: f64 = 1e-12;
const LEAF_MASS_TOL: f64 = 1e-6;
const STATS_SAMPLES: usize = 100;
const STATS_TOL: f64 = 1e-9;
const CRITICAL_TOL: f64 = 1e-3;
const GOLDEN_BUDGET: Duration = Duration::from_secs(10);

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- lexicon

const LEXICON_CASES: [(&str, GenderLabel); 40] = {
    use GenderLabel::{Female as F, Male as M, Unspecified as U};
    [
        ("she", F),
        ("Ġshe", F),
        ("SHE", F),
        ("her", F),
        ("hers", F),
        ("herself", F),
        ("he", M),
        ("Ġhe", M),
        ("him", M),
        ("his", M),
        ("Himself", M),
        ("Father", M),
        ("Ġfather", M),
        ("Mother", F),
        ("ĠMother", F),
        ("woman", F),
        ("WoMaN", F),
        ("man", M),
        ("sister", F),
        ("brother", M),
        ("girl", F),
        ("boy", M),
        ("David", M),
        ("ĠDavid", M),
        ("Mary", F),
        ("▁Mary", F),
        ("MARY", F),
        ("John", M),
        ("they", U),
        ("Ġthey", U),
        ("friend", U),
        ("ĠFriend", U),
        ("patient", U),
        ("Ġpatient", U),
        ("person", U),
        ("##ing", U),
        ("Ġ.", U),
        ("'s", U),
        ("12", U),
        ("Jordan", U),
    ]
};

fn lexicon_suite() -> Check {
    let start = Instant::now();
    let lex = GenderLexicon::bundled();
    let mut wrong = Vec::new();
    for (tok, want) in LEXICON_CASES {
        let got = lex.classify(tok);
        if got != want {
            wrong.push(format!("{tok:?}: got {got:?}, want {want:?}"));
        }
    }
    let elapsed = start.elapsed();
    ensure(wrong.is_empty(), || wrong.join("; "))?;
    ensure(elapsed < LEXICON_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{}/{} tokens agree in {elapsed:?}",
        LEXICON_CASES.len(),
        LEXICON_CASES.len()
    ))
}

// ---------------------------------------------------------------- prompts

fn partition(instances: &[PromptInstance]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for p in instances {
        *out.entry(p.meta.as_str().to_string()).or_insert(0) += 1;
    }
    out
}

fn prompt_counts() -> Check {
    let rq1 = builtin_rq1_templates();
    let rq2 = builtin_rq2_templates();
    for dset in [
        DiagnosisSet::mental_health(),
        DiagnosisSet::general_health(),
    ] {
        let a = expand(&rq1, &dset);
        ensure(a.len() == 187, || {
            format!("rq1 {}: {} prompts", dset.name.label(), a.len())
        })?;
        let phases = partition(&a);
        let want: BTreeMap<String, usize> = [("Diagnosis", 44), ("Intention", 66), ("Action", 77)]
            .map(|(k, v)| (k.to_string(), v))
            .into();
        ensure(phases == want, || format!("rq1 phases {phases:?}"))?;

        let b = expand(&rq2, &dset);
        ensure(b.len() == 297, || {
            format!("rq2 {}: {} prompts", dset.name.label(), b.len())
        })?;
        let dims = partition(&b);
        ensure(dims.len() == 9 && dims.values().all(|&n| n == 33), || {
            format!("rq2 dimensions {dims:?}")
        })?;
    }
    Ok("187 = 44+66+77 and 297 = 9x33 for both diagnosis sets".into())
}

// ------------------------------------------------------------ aggregation

const TOKEN_POOL: [&str; 14] = [
    "Ġshe",
    "Ġhe",
    "Ġwoman",
    "Ġman",
    "ĠMary",
    "ĠDavid",
    "Ġmother",
    "Ġfather",
    "Ġthey",
    "Ġfriend",
    "Ġpatient",
    "Ġperson",
    "Ġsomeone",
    "##s",
];

/// Mostly modifiers, so recursive expansion goes deep.
const PHRASE_POOL: [&str; 12] = [
    "Ġshe", "Ġhe", "ĠMary", "ĠDavid", "Ġfriend", "Ġold", "Ġyoung", "Ġbest", "Ġperson", "Ġsick",
    "Ġmy", "Ġthat",
];

fn random_response(rng: &mut ChaCha8Rng, pool: &[&str], max_len: usize) -> MaskFillResponse {
    let n = rng.gen_range(0..=max_len);
    let weights: Vec<f64> = (0..n).map(|_| rng.gen::<f64>().powi(2)).collect();
    let total: f64 = weights.iter().sum();
    let mass = rng.gen_range(0.3..1.0);
    let mut candidates: Vec<MaskFillCandidate> = weights
        .iter()
        .map(|w| {
            let tok = pool[rng.gen_range(0..pool.len())];
            MaskFillCandidate::new(tok, if total > 0.0 { mass * w / total } else { 0.0 })
        })
        .collect();
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score));
    MaskFillResponse {
        model_id: "random".into(),
        candidates,
    }
}

fn aggregation_properties() -> Check {
    let lex = GenderLexicon::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    for case in 0..AGGREGATION_CASES {
        let resp = random_response(&mut rng, &TOKEN_POOL, 50);
        let f1 = rng.gen_range(0.0..0.05);
        let f2 = f1 + rng.gen_range(0.0..0.05);
        let lo = aggregate_scores(&resp, &lex, f1);
        let hi = aggregate_scores(&resp, &lex, f2);
        ensure(
            hi.p_female <= lo.p_female
                && hi.p_male <= lo.p_male
                && hi.p_unspecified <= lo.p_unspecified,
            || format!("case {case}: raising the floor {f1} -> {f2} grew a bucket"),
        )?;

        let above: f64 = resp
            .candidates
            .iter()
            .filter(|c| c.score > f1)
            .map(|c| c.score)
            .sum();
        let buckets = lo.p_female + lo.p_male + lo.p_unspecified;
        ensure((buckets - above).abs() <= CONSERVATION_TOL, || {
            format!("case {case}: buckets {buckets} vs mass above floor {above}")
        })?;
        ensure(
            (lo.disparity - (lo.p_female - lo.p_male)).abs() <= CONSERVATION_TOL,
            || format!("case {case}: disparity is not p_female - p_male"),
        )?;

        let mut shuffled = resp.clone();
        shuffled.candidates.shuffle(&mut rng);
        let s = aggregate_scores(&shuffled, &lex, f1);
        let diff = (s.p_female - lo.p_female)
            .abs()
            .max((s.p_male - lo.p_male).abs())
            .max((s.p_unspecified - lo.p_unspecified).abs());
        ensure(diff <= CONSERVATION_TOL, || {
            format!("case {case}: permutation changed buckets by {diff}")
        })?;
    }
    Ok(format!(
        "monotonicity, conservation and permutation invariance hold on {AGGREGATION_CASES} random lists"
    ))
}

// -------------------------------------------------------------- recursion

/// Answers every query with up to four candidates drawn from a seeded RNG
/// keyed by the query text.
struct RandomTreeBackend {
    seed: u64,
    max_candidates: usize,
}

impl RandomTreeBackend {
    fn table(&self, text: &str) -> Vec<MaskFillCandidate> {
        let mut h = DefaultHasher::new();
        text.hash(&mut h);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ h.finish());
        random_response(&mut rng, &PHRASE_POOL, self.max_candidates).candidates
    }
}

impl FillMaskBackend for RandomTreeBackend {
    fn describe(&self) -> Result<BackendDescriptor, BackendError> {
        Ok(BackendDescriptor {
            model_id: format!("random-{}", self.seed),
            mask_token: "<mask>".into(),
        })
    }

    fn fill_mask(&self, req: &MaskFillRequest) -> Result<MaskFillResponse, BackendError> {
        let mut candidates = self.table(&req.text);
        candidates.truncate(req.top_k);
        Ok(MaskFillResponse {
            model_id: format!("random-{}", self.seed),
            candidates,
        })
    }
}

/// Gender of a pool token, written out by hand rather than via the lexicon.
fn pool_gender(token: &str) -> Option<char> {
    match token.trim_start_matches('Ġ') {
        "she" | "woman" | "Mary" | "mother" => Some('F'),
        "he" | "man" | "David" | "father" => Some('M'),
        _ => None,
    }
}

#[derive(Default, Debug)]
struct Enumerated {
    female: f64,
    male: f64,
    unspecified: f64,
    /// Deepest level holding a node above the floor.
    deepest: usize,
}

/// Walks every root-to-leaf path directly against the backend's tables and
/// returns how many positive-score candidates the query had.
#[allow(clippy::too_many_arguments)]
fn enumerate(
    b: &RandomTreeBackend,
    prefix: &str,
    suffix: &str,
    phrase: &[String],
    prob: f64,
    depth: usize,
    params: &ExpansionParams,
    acc: &mut Enumerated,
) -> usize {
    let text = if phrase.is_empty() {
        format!("{prefix}<mask>{suffix}")
    } else {
        format!("{prefix}<mask> {}{suffix}", phrase.join(" "))
    };
    let mut table = b.table(&text);
    table.truncate(params.beam);
    table.retain(|c| c.score > 0.0);
    for c in &table {
        let p = prob * c.score;
        let gender = pool_gender(&c.token_str);
        if p <= params.floor {
            if depth > 0 && gender.is_none() {
                acc.unspecified += p;
            }
            continue;
        }
        acc.deepest = acc.deepest.max(depth);
        match gender {
            Some('F') => acc.female += p,
            Some(_) => acc.male += p,
            None if depth >= params.max_depth => acc.unspecified += p,
            None => {
                let mut next = vec![c.token_str.trim_start_matches('Ġ').to_string()];
                next.extend_from_slice(phrase);
                if enumerate(b, prefix, suffix, &next, p, depth + 1, params, acc) == 0 {
                    acc.unspecified += p;
                }
            }
        }
    }
    table.len()
}

fn recursive_oracle() -> Check {
    let lex = GenderLexicon::bundled();
    let templates = builtin_rq2_templates();
    let prompts = expand(&templates, &DiagnosisSet::mental_health());
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
    let mut worst = 0.0f64;
    let mut nodes = 0usize;
    let mut deep = 0usize;
    for i in 0..RECURSIVE_BACKENDS {
        let b = RandomTreeBackend {
            seed: rng.gen(),
            max_candidates: 4,
        };
        let params = ExpansionParams {
            max_depth: [0, 1, 2, 3, 3, 3][rng.gen_range(0..6)],
            beam: 4,
            floor: [0.0, 0.001, 0.01, 0.01, 0.05][rng.gen_range(0..5)],
        };
        let p = &prompts[rng.gen_range(0..prompts.len())];
        let tree = expand_phrases(p, &b, &lex, params).map_err(|e| e.to_string())?;
        let got = aggregate_phrase_scores(&tree, &lex);

        let (prefix, suffix) = p.rendered_text.split_once("<mask>").expect("one mask");
        let mut want = Enumerated::default();
        enumerate(&b, prefix, suffix, &[], 1.0, 0, &params, &mut want);
        if want.deepest >= 2 {
            deep += 1;
        }

        let err = (got.scores.p_female - want.female)
            .abs()
            .max((got.scores.p_male - want.male).abs())
            .max((got.scores.p_unspecified - want.unspecified).abs());
        worst = worst.max(err);
        ensure(err <= RECURSIVE_TOL, || {
            format!(
                "backend {i} ({params:?}): tree {:?} vs enumeration {want:?}",
                got.scores
            )
        })?;

        let leaves = tree.leaves();
        nodes += leaves.len();
        let mass: f64 = leaves.iter().map(|l| l.joint_prob).sum();
        ensure(mass <= 1.0 + LEAF_MASS_TOL, || {
            format!("backend {i}: leaf mass {mass}")
        })?;
    }
    // the comparison says little unless some trees actually recurse
    ensure(deep >= RECURSIVE_BACKENDS / 5, || {
        format!("only {deep} trees reached depth 2")
    })?;
    Ok(format!(
        "{RECURSIVE_BACKENDS} random backends ({deep} reaching depth 2+), {nodes} leaves, max deviation {worst:.1e}"
    ))
}

// ------------------------------------------------------------------ stats

fn reference_paired(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let n = d.len() as f64;
    let mean = d.iter().mean();
    let sd = d.iter().std_dev();
    let t = mean / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).unwrap();
    (t, 2.0 * dist.sf(t.abs()), mean / sd)
}

fn reference_independent(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let df = n1 + n2 - 2.0;
    let sp = (((n1 - 1.0) * a.iter().variance() + (n2 - 1.0) * b.iter().variance()) / df).sqrt();
    let diff = a.iter().mean() - b.iter().mean();
    let t = diff / (sp * (1.0 / n1 + 1.0 / n2).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df).unwrap();
    (t, 2.0 * dist.sf(t.abs()), diff / sp)
}

fn sample(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Vec<f64> {
    (0..n)
        .map(|_| shift + rng.gen_range(0.0..0.4) + rng.gen_range(0.0..0.1))
        .collect()
}

fn statistics_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let mut worst = 0.0f64;
    for i in 0..STATS_SAMPLES {
        let n = rng.gen_range(3..80);
        let shift = rng.gen_range(-0.1..0.1);
        let x = sample(&mut rng, n, shift);
        let y = sample(&mut rng, n, 0.0);
        let got = paired_t(&x, &y).map_err(|e| format!("sample {i}: {e}"))?;
        let (t, p, d) = reference_paired(&x, &y);
        let err = (got.t - t)
            .abs()
            .max((got.p_two_sided - p).abs())
            .max((got.cohens_d - d).abs());
        worst = worst.max(err);
        ensure(err <= STATS_TOL, || {
            format!("paired sample {i}: deviation {err:e}")
        })?;

        let m = rng.gen_range(3..80);
        let z = sample(&mut rng, m, 0.0);
        let got = independent_t(&x, &z).map_err(|e| format!("sample {i}: {e}"))?;
        let (t, p, d) = reference_independent(&x, &z);
        let err = (got.t - t)
            .abs()
            .max((got.p_two_sided - p).abs())
            .max((got.cohens_d - d).abs());
        worst = worst.max(err);
        ensure(err <= STATS_TOL, || {
            format!("independent sample {i}: deviation {err:e}")
        })?;
    }
    for (t, df) in [(12.706, 1.0), (2.776, 4.0)] {
        let p = t_sf_two_sided(t, df).map_err(|e| e.to_string())?;
        ensure((p - 0.05).abs() <= CRITICAL_TOL, || {
            format!("t={t} df={df}: p={p}")
        })?;
    }
    Ok(format!(
        "{STATS_SAMPLES} paired + {STATS_SAMPLES} independent samples within {worst:.1e}; critical values give p=0.05"
    ))
}

// ----------------------------------------------------------------- golden

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

const GOLDEN_FILES: [&str; 7] = [
    "rows_mh.csv",
    "rows_mh.json",
    "rows_nonmh.csv",
    "rows_nonmh.json",
    "stats.csv",
    "stats.json",
    "stats.md",
];

fn replay(rq: &str, out: &Path) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_stigma-probe"))
        .args([
            "run",
            "--rq",
            rq,
            "--set",
            "both",
            "--cache-mode",
            "replay-strict",
            "--format",
            "csv,json,md",
        ])
        .arg("--cache")
        .arg(fixtures().join(format!("{rq}_demo.jsonl")))
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), || {
        format!(
            "{rq} exited {:?}: {}",
            o.status.code(),
            String::from_utf8_lossy(&o.stderr)
        )
    })
}

fn golden_runs() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    for rq in ["rq1", "rq2"] {
        let out = dir.path().join(rq);
        replay(rq, &out)?;
        for f in GOLDEN_FILES {
            let got = fs::read(out.join(f)).map_err(|e| format!("{rq}/{f}: {e}"))?;
            let want = fs::read(fixtures().join("golden").join(rq).join(f))
                .map_err(|e| format!("{rq}/{f}: {e}"))?;
            ensure(got == want, || {
                format!("{rq}/{f} differs from the committed golden file")
            })?;
        }
        ensure(out.join("manifest.json").exists(), || {
            format!("{rq}: no manifest")
        })?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < GOLDEN_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "rq1 and rq2 replays are byte-identical ({elapsed:?}, cache only)"
    ))
}

fn stats_table_shape() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    replay("rq1", dir.path())?;
    let doc: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("stats.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let rows = doc["stats"]
        .as_array()
        .ok_or("stats.json has no stats array")?;
    ensure(rows.len() == 8, || format!("{} test rows", rows.len()))?;
    let subsets = ["Diagnosis", "Intention", "Action", "All"];
    for (i, r) in rows.iter().enumerate() {
        let (kind, labels) = if i < 4 {
            ("paired", ["F", "M"])
        } else {
            ("independent", ["MH", "non-MH"])
        };
        ensure(r["kind"] == kind, || format!("row {i}: kind {}", r["kind"]))?;
        ensure(r["subset"] == subsets[i % 4], || {
            format!("row {i}: subset {}", r["subset"])
        })?;
        let diff = r["mean1"].as_f64().unwrap() - r["mean2"].as_f64().unwrap();
        let want = if diff > 0.0 { labels[0] } else { labels[1] };
        ensure(r["max"] == want, || {
            format!("row {i}: max {} but mean difference {diff}", r["max"])
        })?;
    }
    Ok("4 paired + 4 independent rows; max follows the sign of the mean difference".into())
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("lexicon suite", lexicon_suite),
        ("prompt counts", prompt_counts),
        ("aggregation properties", aggregation_properties),
        ("recursive oracle", recursive_oracle),
        ("statistics oracle", statistics_oracle),
        ("end-to-end golden run", golden_runs),
        ("stats table shape", stats_table_shape),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!(
        "{} of {} acceptance criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
