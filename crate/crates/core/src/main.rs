use std::error::Error;
use std::fs::File;
use std::io::{self, BufReader};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use opportune_core::harness::{
    self, best_beam_selection, emit_plot_data, gen_synthetic_corpus, read_corpus,
    read_results_csv, run_sweep, ModelSpec, SweepConfig, SyntheticSpec,
};
use opportune_core::metrics::{MetricsReport, SentenceMetrics};
use opportune_core::models::LookaheadTransducerModel;
use opportune_core::trace::{read_jsonl, Token};

#[derive(Parser)]
#[command(name = "opportune", version, about = "Simultaneous decoding with revisable windows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic parallel corpus.
    Gen(GenArgs),
    /// Decode a corpus over a policy, window and beam grid.
    Sweep(Box<SweepArgs>),
    /// Recompute metrics from stored trace files.
    Metrics(MetricsArgs),
    /// Rebuild plot tables from a results file.
    Plotdata(PlotArgs),
    /// Serve a builtin model over the newline-delimited JSON protocol.
    Serve(ServeArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    sentences: usize,
    #[arg(long, default_value_t = 4)]
    min_len: usize,
    #[arg(long, default_value_t = 10)]
    max_len: usize,
    #[arg(long, value_delimiter = ',', default_value = "a,b,c,d,e")]
    alphabet: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Echo,
    Lookahead,
    Subprocess,
}

#[derive(Args)]
struct ModelArgs {
    /// Model family; overrides the config file's model.
    #[arg(long)]
    model: Option<ModelKind>,
    /// Source-to-target table, one `src<TAB>tgt` pair per line.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    lookahead: Option<usize>,
    #[arg(long)]
    sharpness: Option<f64>,
    #[arg(long)]
    default_token: Option<String>,
    #[arg(long)]
    anticipation: Option<usize>,
    /// Command line of an external model process.
    #[arg(long)]
    command: Option<String>,
    #[arg(long)]
    timeout_secs: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
}

impl ModelArgs {
    fn apply(&self, spec: Option<ModelSpec>) -> Result<ModelSpec, String> {
        let mut spec = match (self.model, spec) {
            (Some(ModelKind::Echo), _) => ModelSpec::Echo,
            (Some(ModelKind::Lookahead), Some(s @ ModelSpec::Lookahead { .. })) => s,
            (Some(ModelKind::Lookahead), _) => ModelSpec::Lookahead {
                table: None,
                lookahead: 0,
                sharpness: 1.0,
                default_token: "<unk>".into(),
                anticipation: None,
            },
            (Some(ModelKind::Subprocess), Some(s @ ModelSpec::Subprocess { .. })) => s,
            (Some(ModelKind::Subprocess), _) => ModelSpec::Subprocess {
                command: String::new(),
                timeout_secs: None,
                top_k: None,
            },
            (None, Some(s)) => s,
            (None, None) => return Err("no model given (use --model or a config file)".into()),
        };
        match &mut spec {
            ModelSpec::Echo => {}
            ModelSpec::Lookahead {
                table,
                lookahead,
                sharpness,
                default_token,
                anticipation,
            } => {
                if self.table.is_some() {
                    table.clone_from(&self.table);
                }
                *lookahead = self.lookahead.unwrap_or(*lookahead);
                *sharpness = self.sharpness.unwrap_or(*sharpness);
                if let Some(d) = &self.default_token {
                    default_token.clone_from(d);
                }
                if self.anticipation.is_some() {
                    *anticipation = self.anticipation;
                }
            }
            ModelSpec::Subprocess {
                command,
                timeout_secs,
                top_k,
            } => {
                if let Some(c) = &self.command {
                    command.clone_from(c);
                }
                if command.is_empty() {
                    return Err("subprocess model needs --command".into());
                }
                if self.timeout_secs.is_some() {
                    *timeout_secs = self.timeout_secs;
                }
                if self.top_k.is_some() {
                    *top_k = self.top_k;
                }
            }
        }
        Ok(spec)
    }
}

#[derive(Args)]
struct SweepArgs {
    /// TOML file supplying any of the options below; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    source: Option<PathBuf>,
    /// Reference file; repeat for multiple references.
    #[arg(long = "reference")]
    references: Vec<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    rho: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    window: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    beam: Vec<usize>,
    #[arg(long)]
    retranslation: Option<bool>,
    #[arg(long)]
    full_sentence: Option<bool>,
    #[arg(long)]
    length_ratio_cap: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Generate this many synthetic sentences instead of reading a corpus.
    #[arg(long)]
    synthetic_sentences: Option<usize>,
    /// Also print the best beam per (policy, parameter, window).
    #[arg(long)]
    select_beam: bool,
}

impl SweepArgs {
    fn into_config(self) -> Result<SweepConfig, Box<dyn Error>> {
        let mut config = match &self.config {
            Some(path) => Some(SweepConfig::from_file(path)?),
            None => None,
        };
        let model = self.model.apply(config.as_ref().map(|c| c.model.clone()))?;
        let mut config = match config.take() {
            Some(mut c) => {
                c.model = model;
                c
            }
            None => {
                let output = self
                    .output
                    .clone()
                    .ok_or("no output directory (use --output or a config file)")?;
                SweepConfig::new(output, model)
            }
        };
        if let Some(o) = self.output {
            config.output = o;
        }
        if self.source.is_some() {
            config.source = self.source;
        }
        if !self.references.is_empty() {
            config.references = self.references;
        }
        let replace = |dst: &mut Vec<_>, src: Vec<_>| {
            if !src.is_empty() {
                *dst = src;
            }
        };
        replace(&mut config.k, self.k);
        replace(&mut config.window, self.window);
        replace(&mut config.beam, self.beam);
        if !self.rho.is_empty() {
            config.rho = self.rho;
        }
        if let Some(v) = self.retranslation {
            config.include_retranslation = v;
        }
        if let Some(v) = self.full_sentence {
            config.include_fullsentence = v;
        }
        if let Some(v) = self.length_ratio_cap {
            config.length_ratio_cap = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(n) = self.synthetic_sentences {
            match &mut config.synthetic {
                Some(syn) => syn.sentences = n,
                None => {
                    config.synthetic = Some(SyntheticSpec {
                        sentences: n,
                        min_len: 4,
                        max_len: 10,
                        alphabet: ["a", "b", "c", "d", "e"].map(String::from).to_vec(),
                    })
                }
            }
        }
        Ok(config)
    }
}

#[derive(Args)]
struct MetricsArgs {
    /// Trace JSONL file; repeat to pool several.
    #[arg(long = "traces", required = true)]
    traces: Vec<PathBuf>,
    /// Reference file aligned with the traces; enables BLEU.
    #[arg(long = "reference")]
    references: Vec<PathBuf>,
    /// Print one CSV line per sentence after the summary.
    #[arg(long)]
    per_sentence: bool,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Vocabulary of the echo model.
    #[arg(long, value_delimiter = ',', default_value = "a,b,c,d,e")]
    alphabet: Vec<String>,
}

fn gen(args: GenArgs) -> Result<(), Box<dyn Error>> {
    let syn = gen_synthetic_corpus(
        &args.out,
        args.seed,
        args.sentences,
        (args.min_len, args.max_len),
        &args.alphabet,
    )?;
    println!("{}", syn.source_path.display());
    println!("{}", syn.reference_path.display());
    println!("{}", syn.table_path.display());
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), Box<dyn Error>> {
    let select = args.select_beam;
    let config = args.into_config()?;
    let outcome = run_sweep(&config)?;
    print!("{}", std::fs::read_to_string(&outcome.results_path)?);
    if select {
        println!();
        for row in best_beam_selection(&outcome.rows) {
            let param = row.parameter.map_or("-".into(), |p| p.to_string());
            let window = row.window.map_or("-".into(), |w| w.to_string());
            println!(
                "best {} {} w={} b={} bleu={:.4} ral={:.4}",
                row.policy, param, window, row.beam, row.bleu, row.ral
            );
        }
    }
    Ok(())
}

fn metrics(args: MetricsArgs) -> Result<(), Box<dyn Error>> {
    let mut traces = Vec::new();
    for path in &args.traces {
        let file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
        traces.extend(read_jsonl(BufReader::new(file))?);
    }
    let mut references: Vec<Vec<Vec<Token>>> = vec![Vec::new(); traces.len()];
    for path in &args.references {
        let refs = read_corpus(path)?;
        if refs.len() != traces.len() {
            return Err(format!(
                "{} has {} lines but {} traces were read",
                path.display(),
                refs.len(),
                traces.len()
            )
            .into());
        }
        for (slot, r) in references.iter_mut().zip(refs) {
            slot.push(r);
        }
    }
    for (i, trace) in traces.iter().enumerate() {
        trace
            .validate()
            .map_err(|v| format!("trace {}: {v}", i + 1))?;
    }
    let refs = (!args.references.is_empty()).then_some(references.as_slice());
    let report = MetricsReport::from_traces(&traces, refs)?;
    println!("{report}");
    if args.per_sentence {
        println!("sentence,source_len,output_len,ral,al,revision_rate");
        for (i, s) in report.sentences.iter().enumerate() {
            let SentenceMetrics {
                source_len,
                output_len,
                ral,
                al,
                ..
            } = s;
            println!(
                "{},{source_len},{output_len},{ral:.6},{al:.6},{:.6}",
                i + 1,
                s.revision_rate()
            );
        }
    }
    Ok(())
}

fn plotdata(args: PlotArgs) -> Result<(), Box<dyn Error>> {
    let rows = read_results_csv(&args.results)?;
    std::fs::create_dir_all(&args.out)?;
    for path in emit_plot_data(&rows, &args.out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<(), Box<dyn Error>> {
    let spec = args.model.apply(None)?;
    let model: Box<dyn opportune_core::IncrementalModel> = match spec {
        ModelSpec::Echo => {
            let alphabet = args
                .alphabet
                .iter()
                .map(|a| Token::new(a))
                .collect::<Result<Vec<_>, _>>()?;
            Box::new(LookaheadTransducerModel::echo(&alphabet)?)
        }
        ModelSpec::Lookahead {
            table,
            lookahead,
            sharpness,
            default_token,
            anticipation,
        } => {
            let table = harness::load_table(&table.ok_or("lookahead model needs --table")?)?;
            Box::new(LookaheadTransducerModel::with_anticipation(
                table,
                lookahead,
                anticipation.unwrap_or(lookahead + 1),
                Token::new(&default_token)?,
                sharpness,
            )?)
        }
        ModelSpec::Subprocess { .. } => return Err("serve needs a builtin model".into()),
    };
    harness::serve(model.as_ref(), io::stdin().lock(), io::stdout().lock())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Sweep(a) => sweep(*a),
        Command::Metrics(a) => metrics(a),
        Command::Plotdata(a) => plotdata(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut message = format!("error: {e}");
            let mut cause = e.source();
            while let Some(c) = cause {
                message.push_str(&format!("\n  caused by: {c}"));
                cause = c.source();
            }
            eprintln!("{message}");
            ExitCode::FAILURE
        }
    }
}
