//! Command-line front end. Everything here is a thin layer over the library.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::aggregation::{
    classify_with_placeholders, AggregationPolicy, CalibrationAnchor, CalibrationCache, VoteMode,
    DEFAULT_INTERCEPT, MAX_PLACEHOLDERS,
};
use crate::backend::{
    argmax, LanguageModel, RemoteBackend, TabularLm, ToyTransformer, ToyTransformerConfig,
};
use crate::baselines::{
    generate_classify, self_consistency, way_seeds, Decoding, DEFAULT_MAX_TOKENS,
};
use crate::engine::{psp_scores, CalibrationVariant};
use crate::error::Error;
use crate::harness::{
    emit_report, evaluate, load_dataset, EvalOptions, Method, ReportFormat, StdKind,
};
use crate::types::{load_prompt_set, LabelSpec, PromptTemplate, Sample, Vocab};

pub const REMOTE_URL_ENV: &str = "PH_REMOTE_URL";
pub const DEFAULT_ETA: usize = 5;

#[derive(Debug, Parser)]
#[command(
    name = "p3",
    version,
    about = "Zero-shot classification from predictions at placeholder positions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify a single text and print the decision
    Classify(ClassifyArgs),
    /// Evaluate methods over a labeled dataset and a prompt set
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Ntp,
    Psp,
    P3,
    Gen,
    Sc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    NextToken,
    Skip,
    Slope,
    RangeVote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CalibrationArg {
    None,
    Na,
    Empty,
    Unk5,
}

impl From<CalibrationArg> for CalibrationVariant {
    fn from(c: CalibrationArg) -> Self {
        match c {
            CalibrationArg::None => CalibrationVariant::None,
            CalibrationArg::Na => CalibrationVariant::Na,
            CalibrationArg::Empty => CalibrationVariant::Empty,
            CalibrationArg::Unk5 => CalibrationVariant::Unk5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StdArg {
    Population,
    Sample,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// toy[:vocab=16,layers=2,hidden=32,heads=4,max_len=64,seed=0,vocab_file=PATH] | tabular:PATH | remote[:URL]
    #[arg(long, default_value = "toy")]
    pub backend: String,

    /// Label-spec JSON file
    #[arg(long)]
    pub labels: PathBuf,

    /// Prompt-set file, one template per line
    #[arg(long, conflicts_with = "null_prompt")]
    pub prompts: Option<PathBuf>,

    /// Use the null template "{text}" ("{title} {text}" with --titled)
    #[arg(long)]
    pub null_prompt: bool,

    /// Samples carry titles; blank prompt lines become "{title} {text}"
    #[arg(long)]
    pub titled: bool,

    /// Aggregation policy for the p3 method
    #[arg(long, value_enum, default_value_t = PolicyArg::RangeVote)]
    pub policy: PolicyArg,

    /// Range-vote position count, or slope angle in degrees
    #[arg(long)]
    pub eta: Option<f64>,

    /// Slope-policy intercept
    #[arg(long, allow_negative_numbers = true)]
    pub intercept: Option<f64>,

    /// Skip index for psp and the skip policy
    #[arg(long)]
    pub skip: Option<usize>,

    /// Minimum number of placeholders appended by p3
    #[arg(long)]
    pub placeholders: Option<usize>,

    /// Content-free calibration for range vote
    #[arg(long, value_enum, default_value_t = CalibrationArg::None)]
    pub calibration: CalibrationArg,

    /// Sum calibrated scores over the voting range instead of counting ballots
    #[arg(long)]
    pub score_sum: bool,

    /// Calibrate every voting position with the next-token content-free vector
    #[arg(long)]
    pub anchor_next_token: bool,

    /// Base seed for sampled decoding
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Self-consistency ways
    #[arg(long, default_value_t = 3)]
    pub ways: usize,

    /// Self-consistency sampling temperature
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,

    /// Generation cap for gen and sc
    #[arg(long, default_value_t = DEFAULT_MAX_TOKENS)]
    pub max_tokens: usize,

    /// Maximum sequence length for the remote backend
    #[arg(long, default_value_t = crate::backend::DEFAULT_REMOTE_MAX_LEN)]
    pub remote_max_len: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Classification method
    #[arg(long, value_enum, default_value_t = MethodArg::P3)]
    pub method: MethodArg,

    /// Text to classify
    #[arg(long)]
    pub text: String,

    /// Title for templates that use {title}
    #[arg(long)]
    pub title: Option<String>,

    /// Which template of the prompt set to use
    #[arg(long, default_value_t = 0)]
    pub template_index: usize,

    /// Print the position × class score matrix
    #[arg(long)]
    pub dump_matrix: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Methods to evaluate; one report is written per method and policy
    #[arg(long, value_enum, value_delimiter = ',', default_value = "p3")]
    pub method: Vec<MethodArg>,

    /// JSONL dataset
    #[arg(long)]
    pub dataset: PathBuf,

    /// Output directory for reports
    #[arg(long)]
    pub out: PathBuf,

    /// Report file format
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    pub format: FormatArg,

    /// Eta values for p3, as START..END (exclusive) or START..=END
    #[arg(long)]
    pub eta_sweep: Option<String>,

    /// Evaluate only the first N samples
    #[arg(long)]
    pub sample_cap: Option<usize>,

    /// Evaluation worker threads
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,

    /// Cross-prompt standard deviation estimator
    #[arg(long, value_enum, default_value_t = StdArg::Population)]
    pub std: StdArg,
}

#[derive(Debug)]
pub enum CliError {
    /// Invalid flags or flag combinations (exit code 2).
    Usage(String),
    /// Failure while running (exit code 1).
    Run(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Run(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(msg) | Error::InvalidPolicy(msg) => CliError::Usage(msg),
            other => CliError::Run(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(Error::io("<stdout>", e))
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(msg.into()))
}

/// Parsed `--backend` value.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Toy {
        config: ToyTransformerConfig,
        vocab_file: Option<PathBuf>,
    },
    Tabular(PathBuf),
    Remote(Option<String>),
}

impl BackendSpec {
    pub fn parse(raw: &str) -> Result<Self, CliError> {
        let (kind, rest) = match raw.split_once(':') {
            Some((k, r)) => (k, Some(r)),
            None => (raw, None),
        };
        match kind {
            "toy" => {
                let mut config = ToyTransformerConfig::default();
                let mut vocab_file = None;
                for pair in rest.unwrap_or("").split(',').filter(|p| !p.is_empty()) {
                    let (key, value) = pair.split_once('=').ok_or_else(|| {
                        CliError::Usage(format!("toy option {pair:?} is not key=value"))
                    })?;
                    let num = || {
                        value.parse::<u64>().map_err(|_| {
                            CliError::Usage(format!("toy option {key} needs an integer"))
                        })
                    };
                    match key {
                        "vocab" => config.vocab = num()? as usize,
                        "layers" => config.layers = num()? as usize,
                        "hidden" => config.hidden = num()? as usize,
                        "heads" => config.heads = num()? as usize,
                        "max_len" => config.max_len = num()? as usize,
                        "seed" => config.seed = num()?,
                        "vocab_file" => vocab_file = Some(PathBuf::from(value)),
                        other => return usage(format!("unknown toy option {other:?}")),
                    }
                }
                config.validate()?;
                Ok(BackendSpec::Toy { config, vocab_file })
            }
            "tabular" => match rest {
                Some(path) if !path.is_empty() => Ok(BackendSpec::Tabular(PathBuf::from(path))),
                _ => usage("tabular backend needs a table file: tabular:PATH"),
            },
            "remote" => Ok(BackendSpec::Remote(
                rest.filter(|r| !r.is_empty()).map(str::to_string),
            )),
            other => usage(format!(
                "unknown backend {other:?}; expected toy, tabular or remote"
            )),
        }
    }

    pub fn build(&self, remote_max_len: usize) -> Result<Box<dyn LanguageModel>, CliError> {
        Ok(match self {
            BackendSpec::Toy { config, vocab_file } => {
                let model = match vocab_file {
                    Some(path) => {
                        let vocab = Vocab::from_json_file(path)?;
                        let config = ToyTransformerConfig {
                            vocab: vocab.size(),
                            ..*config
                        };
                        ToyTransformer::with_vocab(config, vocab)?
                    }
                    None => ToyTransformer::new(*config)?,
                };
                Box::new(model)
            }
            BackendSpec::Tabular(path) => Box::new(TabularLm::from_json_file(path)?),
            BackendSpec::Remote(url) => {
                let url = match url {
                    Some(u) => u.clone(),
                    None => std::env::var(REMOTE_URL_ENV).map_err(|_| {
                        CliError::Usage(format!(
                            "remote backend needs remote:URL or {REMOTE_URL_ENV}"
                        ))
                    })?,
                };
                Box::new(RemoteBackend::connect(&url, remote_max_len)?)
            }
        })
    }
}

/// Parses `a..b` (exclusive) or `a..=b` (inclusive).
pub fn parse_sweep(raw: &str) -> Result<Vec<u32>, CliError> {
    let bad = || CliError::Usage(format!("eta sweep {raw:?} must look like 0..10 or 0..=10"));
    let (start, end, inclusive) = if let Some((a, b)) = raw.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = raw.split_once("..") {
        (a, b, false)
    } else {
        return Err(bad());
    };
    let start: u32 = start.trim().parse().map_err(|_| bad())?;
    let end: u32 = end.trim().parse().map_err(|_| bad())?;
    let values: Vec<u32> = if inclusive {
        (start..=end).collect()
    } else {
        (start..end).collect()
    };
    if values.is_empty() {
        return Err(bad());
    }
    Ok(values)
}

impl CommonArgs {
    /// Builds the p3 policy, with `eta` overriding `--eta` for sweeps.
    fn policy(&self, eta: Option<f64>) -> Result<AggregationPolicy, CliError> {
        let eta = eta.or(self.eta);
        let policy = match self.policy {
            PolicyArg::NextToken => AggregationPolicy::NextToken,
            PolicyArg::Skip => AggregationPolicy::SkipPosition {
                skip: self.skip.unwrap_or(0),
            },
            PolicyArg::Slope => AggregationPolicy::SlopePosition {
                eta_degrees: eta.unwrap_or(0.0),
                intercept: self.intercept.unwrap_or(DEFAULT_INTERCEPT),
            },
            PolicyArg::RangeVote => {
                let eta = eta.unwrap_or(DEFAULT_ETA as f64);
                if eta < 0.0 || eta.fract() != 0.0 {
                    return usage(format!(
                        "range-vote eta must be a non-negative integer, got {eta}"
                    ));
                }
                if eta == 0.0 {
                    // an empty voting range degenerates to the next token
                    AggregationPolicy::NextToken
                } else {
                    AggregationPolicy::RangeVote {
                        eta: eta as usize,
                        calibration: self.calibration.into(),
                        vote: if self.score_sum {
                            VoteMode::ScoreSum
                        } else {
                            VoteMode::Plurality
                        },
                        anchor: if self.anchor_next_token {
                            CalibrationAnchor::NextToken
                        } else {
                            CalibrationAnchor::PerPosition
                        },
                    }
                }
            }
        };
        policy.validate()?;
        Ok(policy)
    }

    fn method(&self, method: MethodArg, eta: Option<f64>) -> Result<Method, CliError> {
        Ok(match method {
            MethodArg::Ntp => Method::Ntp,
            MethodArg::Psp => Method::Psp {
                skip: self.skip.unwrap_or(0),
            },
            MethodArg::P3 => Method::P3 {
                policy: self.policy(eta)?,
            },
            MethodArg::Gen => Method::Gen {
                max_tokens: self.max_tokens,
            },
            MethodArg::Sc => Method::Sc {
                ways: self.ways,
                temperature: self.temperature,
                seed: self.seed,
                max_tokens: self.max_tokens,
            },
        })
    }

    /// Rejects flag combinations that the chosen methods would ignore.
    fn validate_for(&self, methods: &[MethodArg], sweeping: bool) -> Result<(), CliError> {
        let has = |m: MethodArg| methods.contains(&m);
        if self.prompts.is_none() && !self.null_prompt {
            return usage("either --prompts or --null-prompt is required");
        }
        if (self.eta.is_some() || sweeping) && !has(MethodArg::P3) {
            return usage("--eta and --eta-sweep apply only to the p3 method");
        }
        if (self.eta.is_some() || sweeping)
            && !matches!(self.policy, PolicyArg::Slope | PolicyArg::RangeVote)
        {
            return usage("--eta applies only to the slope and range-vote policies");
        }
        if self.intercept.is_some() && !(has(MethodArg::P3) && self.policy == PolicyArg::Slope) {
            return usage("--intercept applies only to p3 with the slope policy");
        }
        let range_vote = has(MethodArg::P3) && self.policy == PolicyArg::RangeVote;
        if (self.calibration != CalibrationArg::None || self.score_sum || self.anchor_next_token)
            && !range_vote
        {
            return usage("--calibration, --score-sum and --anchor-next-token apply only to p3 with range-vote");
        }
        if self.skip.is_some()
            && !(has(MethodArg::Psp) || (has(MethodArg::P3) && self.policy == PolicyArg::Skip))
        {
            return usage("--skip applies only to psp or p3 with the skip policy");
        }
        if self.placeholders.is_some() && !has(MethodArg::P3) {
            return usage("--placeholders applies only to the p3 method");
        }
        if self.ways == 0 {
            return usage("--ways must be at least 1");
        }
        if self.max_tokens == 0 {
            return usage("--max-tokens must be at least 1");
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return usage("--temperature must be >= 0");
        }
        Ok(())
    }

    fn templates(&self) -> Result<Vec<PromptTemplate>, CliError> {
        match &self.prompts {
            Some(path) => {
                let set = load_prompt_set(path, self.titled)?;
                if set.is_empty() {
                    return usage(format!("prompt set {} is empty", path.display()));
                }
                Ok(set)
            }
            None => Ok(vec![PromptTemplate::null(self.titled)]),
        }
    }
}

fn load_labels(path: &Path, backend: &dyn LanguageModel) -> Result<LabelSpec, CliError> {
    let labels = LabelSpec::from_json_file(path)?;
    labels.check_vocab(backend.vocab())?;
    Ok(labels)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Classify(args) => cmd_classify(&args, out),
        Command::Evaluate(args) => cmd_evaluate(&args, out),
    }
}

pub fn cmd_classify(args: &ClassifyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let common = &args.common;
    common.validate_for(&[args.method], false)?;
    let method = common.method(args.method, None)?;
    let templates = common.templates()?;
    let template = templates.get(args.template_index).cloned().ok_or_else(|| {
        CliError::Usage(format!(
            "--template-index {} but the prompt set has {} templates",
            args.template_index,
            templates.len()
        ))
    })?;
    let spec = BackendSpec::parse(&common.backend)?;
    let backend = spec.build(common.remote_max_len)?;
    let labels = load_labels(&common.labels, backend.as_ref())?;

    let mut sample = Sample::new(args.text.clone());
    sample.title = args.title.clone();
    let prompt = template.render(&sample)?;

    let name = |c: Option<usize>| c.map_or("undecided".to_string(), |c| labels.name(c).to_string());
    match &method {
        Method::P3 { policy } => {
            let min_m = common.placeholders.unwrap_or(0).min(MAX_PLACEHOLDERS);
            let cache = CalibrationCache::new();
            let decision = classify_with_placeholders(
                backend.as_ref(),
                &prompt,
                &template,
                &labels,
                policy,
                &cache,
                min_m,
            )?;
            writeln!(out, "decision: {}", name(Some(decision.class)))?;
            if args.dump_matrix {
                let header: Vec<&str> = labels.classes().iter().map(|c| c.name.as_str()).collect();
                writeln!(out, "position\t{}", header.join("\t"))?;
                for (i, row) in decision.matrix.rows().iter().enumerate() {
                    let cells: Vec<String> = row.iter().map(|v| format!("{v:.6e}")).collect();
                    writeln!(out, "{i}\t{}", cells.join("\t"))?;
                }
            }
        }
        Method::Ntp | Method::Psp { .. } => {
            let skip = if let Method::Psp { skip } = method {
                skip
            } else {
                0
            };
            let x = backend.tokenize(&prompt)?;
            if x.is_empty() {
                return Err(CliError::Run(Error::EmptyInput));
            }
            let scores = psp_scores(backend.as_ref(), &x, skip, &labels)?;
            writeln!(out, "decision: {}", name(Some(argmax(&scores))))?;
            if args.dump_matrix {
                let header: Vec<&str> = labels.classes().iter().map(|c| c.name.as_str()).collect();
                writeln!(out, "position\t{}", header.join("\t"))?;
                let cells: Vec<String> = scores.iter().map(|v| format!("{v:.6e}")).collect();
                writeln!(out, "{skip}\t{}", cells.join("\t"))?;
            }
        }
        Method::Gen { max_tokens } => {
            let x = backend.tokenize(&prompt)?;
            let outcome =
                generate_classify(backend.as_ref(), &x, &labels, *max_tokens, Decoding::Greedy)?;
            writeln!(out, "decision: {}", name(outcome.matched_class))?;
            writeln!(out, "runs: {}", outcome.tokens_consumed)?;
            writeln!(
                out,
                "generated: {}",
                backend.detokenize(&outcome.generated_tokens)
            )?;
        }
        Method::Sc {
            ways,
            temperature,
            seed,
            max_tokens,
        } => {
            let x = backend.tokenize(&prompt)?;
            let seeds = way_seeds(*seed, 0, *ways);
            let outcome = self_consistency(
                backend.as_ref(),
                &x,
                &labels,
                *temperature,
                &seeds,
                *max_tokens,
            )?;
            writeln!(out, "decision: {}", name(outcome.decision))?;
            writeln!(out, "runs: {}", outcome.total_runs)?;
        }
    }
    Ok(())
}

/// Report file name for one evaluated method.
pub fn report_file_name(method: &Method, format: ReportFormat) -> String {
    match method {
        Method::P3 { policy } => format!("p3-{}.{}", policy.tag(), format.extension()),
        Method::Psp { skip } => format!("psp-skip{skip}.{}", format.extension()),
        other => format!("{}.{}", other.name(), format.extension()),
    }
}

pub fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let common = &args.common;
    let sweep = args.eta_sweep.as_deref().map(parse_sweep).transpose()?;
    common.validate_for(&args.method, sweep.is_some())?;
    if args.jobs == 0 {
        return usage("--jobs must be at least 1");
    }
    let mut methods = Vec::new();
    for &m in &args.method {
        match (&sweep, m) {
            (Some(values), MethodArg::P3) => {
                for &eta in values {
                    methods.push(common.method(m, Some(eta as f64))?);
                }
            }
            _ => methods.push(common.method(m, None)?),
        }
    }
    let format = match args.format {
        FormatArg::Json => ReportFormat::Json,
        FormatArg::Csv => ReportFormat::Csv,
    };
    let templates = common.templates()?;
    let spec = BackendSpec::parse(&common.backend)?;
    let backend = spec.build(common.remote_max_len)?;
    let labels = load_labels(&common.labels, backend.as_ref())?;
    let mut samples = load_dataset(&args.dataset, Some(&labels))?;
    if let Some(cap) = args.sample_cap {
        samples.truncate(cap);
    }
    let options = EvalOptions {
        jobs: args.jobs,
        std_kind: match args.std {
            StdArg::Population => StdKind::Population,
            StdArg::Sample => StdKind::Sample,
        },
    };
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for method in &methods {
        let report = evaluate(
            backend.as_ref(),
            &templates,
            &samples,
            &labels,
            method,
            options,
        )?;
        let path = args.out.join(report_file_name(method, format));
        emit_report(&report, &path, format)?;
        writeln!(
            out,
            "{}\tmean_accuracy={:.4}\tstd={:.4}\tn={}",
            path.display(),
            report.mean_accuracy,
            report.cross_prompt_std,
            report.n_samples
        )?;
    }
    Ok(())
}
