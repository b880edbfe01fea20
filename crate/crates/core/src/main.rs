use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stigma_probe::backend::CacheMode;
use stigma_probe::lexicon::GenderLexicon;
use stigma_probe::prompts::{
    builtin_rq1_templates, builtin_rq2_templates, expand, read_templates_csv, DiagnosisSet,
};
use stigma_probe::report::OutputFormat;
use stigma_probe::run::{cmd_run, BackendSource, LexiconPaths, Rq, RunConfig, SetSelector};
use stigma_probe::Execution;

#[derive(Parser)]
#[command(
    name = "stigma-probe",
    version,
    about = "Measure gendered mental-health stigma in masked language models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an audit and write rows, statistics and a manifest.
    Run(Box<RunArgs>),
    /// Check lexicon files and print entry counts.
    ValidateLexicon(LexiconArgs),
    /// Print the expanded prompts.
    PrintPrompts(PrintArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum RqArg {
    Rq1,
    Rq2,
}

#[derive(Clone, Copy, ValueEnum)]
enum SetArg {
    Mh,
    Nonmh,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum CacheModeArg {
    Record,
    ReplayStrict,
    ReplayFallback,
}

#[derive(Args, Default)]
struct LexiconArgs {
    /// Gendered nouns, one `word,label` per line (label F or M).
    #[arg(long, requires_all = ["female_names", "male_names"])]
    nouns: Option<PathBuf>,
    /// Female first names, one per line, most frequent first.
    #[arg(long, requires_all = ["nouns", "male_names"])]
    female_names: Option<PathBuf>,
    /// Male first names, one per line, most frequent first.
    #[arg(long, requires_all = ["nouns", "female_names"])]
    male_names: Option<PathBuf>,
}

impl LexiconArgs {
    fn paths(&self) -> Option<LexiconPaths> {
        Some(LexiconPaths {
            nouns: self.nouns.clone()?,
            female_names: self.female_names.clone()?,
            male_names: self.male_names.clone()?,
        })
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    rq: RqArg,
    #[arg(long, value_enum, default_value = "both")]
    set: SetArg,
    /// Base URL of a fill-mask inference service.
    #[arg(long, conflicts_with = "synthetic")]
    backend_url: Option<String>,
    /// JSON description of a synthetic backend.
    #[arg(long)]
    synthetic: Option<PathBuf>,
    /// JSON-Lines record/replay cache.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(
        long,
        value_enum,
        requires = "cache",
        default_value = "replay-fallback"
    )]
    cache_mode: CacheModeArg,
    /// Scores must be strictly above this to count.
    #[arg(long, default_value_t = 0.01)]
    floor: f64,
    /// Candidates per query for rq1 (default 50).
    #[arg(long)]
    top_k: Option<usize>,
    /// Candidates per query for rq2 (default 10).
    #[arg(long)]
    beam: Option<usize>,
    /// Modifier rounds for rq2 (default 3).
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long, default_value = "report")]
    out: PathBuf,
    /// Comma-separated list of csv, json, md.
    #[arg(long, value_delimiter = ',', default_value = "csv,json")]
    format: Vec<String>,
    /// User templates CSV (`text,meta,reverse_coded`).
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Write every rq2 phrase tree as JSON into this directory.
    #[arg(long)]
    dump_trees: Option<PathBuf>,
    /// Disable parallel fan-out over prompts.
    #[arg(long)]
    sequential: bool,
    #[command(flatten)]
    lexicon: LexiconArgs,
}

#[derive(Args)]
struct PrintArgs {
    #[arg(long, value_enum)]
    rq: RqArg,
    #[arg(long, value_enum, default_value = "mh")]
    set: SetArg,
    #[arg(long)]
    templates: Option<PathBuf>,
}

fn run(args: RunArgs) -> ExitCode {
    let formats: Result<Vec<OutputFormat>, String> =
        args.format.iter().map(|f| f.parse()).collect();
    let formats = match formats {
        Ok(f) => f,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(3);
        }
    };
    let backend = match (args.backend_url, args.synthetic) {
        (Some(url), _) => BackendSource::Url(url),
        (None, Some(path)) => BackendSource::Synthetic(path),
        (None, None) => BackendSource::CacheOnly,
    };
    let rq = match args.rq {
        RqArg::Rq1 => Rq::Rq1,
        RqArg::Rq2 => Rq::Rq2,
    };
    let set = match args.set {
        SetArg::Mh => SetSelector::Mh,
        SetArg::Nonmh => SetSelector::Nonmh,
        SetArg::Both => SetSelector::Both,
    };
    let mut cfg = RunConfig::new(rq, set, backend, args.out);
    if let Some(path) = args.cache {
        let mode = match args.cache_mode {
            CacheModeArg::Record => CacheMode::Record,
            CacheModeArg::ReplayStrict => CacheMode::ReplayStrict,
            CacheModeArg::ReplayFallback => CacheMode::ReplayFallback,
        };
        cfg = cfg.with_cache(path, mode);
    }
    cfg.floor = args.floor;
    cfg.top_k = args.top_k;
    cfg.beam = args.beam;
    cfg.max_depth = args.max_depth;
    cfg.formats = formats;
    cfg.templates = args.templates;
    cfg.dump_trees = args.dump_trees;
    cfg.lexicon = args.lexicon.paths();
    if args.sequential {
        cfg.execution = Execution::Sequential;
    }

    match cmd_run(&cfg) {
        Ok(bundle) => {
            for (set, rows) in &bundle.rows {
                eprintln!("{}: {} rows", set, rows.len());
            }
            eprintln!("{} statistical tests", bundle.stats.len());
            let mut trees = 0;
            for f in &bundle.files {
                match &cfg.dump_trees {
                    Some(dir) if f.starts_with(dir) => trees += 1,
                    _ => println!("{}", f.display()),
                }
            }
            if let Some(dir) = &cfg.dump_trees {
                eprintln!("{trees} phrase trees in {}", dir.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn validate_lexicon(args: LexiconArgs) -> ExitCode {
    let lex = match args.paths() {
        Some(p) => GenderLexicon::load(&p.nouns, &p.female_names, &p.male_names),
        None => Ok(GenderLexicon::bundled()),
    };
    match lex {
        Ok(lex) => {
            let s = lex.stats();
            println!(
                "{} nouns, {}+{} names, 0 collisions",
                s.nouns, s.female_names, s.male_names
            );
            if !s.dropped_ambiguous.is_empty() {
                println!(
                    "dropped {} ambiguous names: {}",
                    s.dropped_ambiguous.len(),
                    s.dropped_ambiguous.join(", ")
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}

fn print_prompts(args: PrintArgs) -> ExitCode {
    let templates = match &args.templates {
        Some(path) => match std::fs::File::open(path)
            .map_err(|e| e.to_string())
            .and_then(|f| read_templates_csv(f, "user").map_err(|e| e.to_string()))
        {
            Ok(t) => t,
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                return ExitCode::from(3);
            }
        },
        None => match args.rq {
            RqArg::Rq1 => builtin_rq1_templates(),
            RqArg::Rq2 => builtin_rq2_templates(),
        },
    };
    let sets = match args.set {
        SetArg::Mh => vec![DiagnosisSet::mental_health()],
        SetArg::Nonmh => vec![DiagnosisSet::general_health()],
        SetArg::Both => vec![
            DiagnosisSet::mental_health(),
            DiagnosisSet::general_health(),
        ],
    };
    for dset in &sets {
        for p in expand(&templates, dset) {
            println!(
                "{}\t{}\t{}\t{}{}",
                p.template_id,
                p.diagnosis_set,
                p.meta,
                p.rendered_text,
                if p.reverse_coded {
                    "\t(reverse coded)"
                } else {
                    ""
                }
            );
        }
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are configuration errors; 2 is reserved for the backend
            return if e.use_stderr() {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match cli.command {
        Command::Run(args) => run(*args),
        Command::ValidateLexicon(args) => validate_lexicon(args),
        Command::PrintPrompts(args) => print_prompts(args),
    }
}
