//! The `svta-kit` command-line front end.
//!
//! Exit codes: 0 success, 1 usage, I/O or parse error, 2 numerical failure,
//! 3 partial failure (some ranks or rows could not be produced).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gram::{
    estimate_contraction, gram_matrices, max_convergent_gamma, tree_gram_fixed_point, SolverOptions,
};
use crate::grammar::{estimate_mle, parse_wcfg, string_weight, wcfg_to_wta, wta_to_wcfg, TreeBank};
use crate::metrics::{l2_distance, perplexity};
use crate::svta::{bound_cumulative, compute_svta, truncate_svta_with, BoundConfig, Svta};
use crate::trees::{parse_corpus, parse_tree, Tree};
use crate::wta::{Wta, WtaFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "SVTA_KIT_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "svta-kit",
    version,
    about = "Approximate minimization of weighted tree automata"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the singular value canonical form and write `<out>/svta.wta`.
    Svta {
        input: PathBuf,
        #[arg(long)]
        kind: Option<InputKind>,
        #[command(flatten)]
        solver: SolverArgs,
        /// `off`, `auto`, or a positive rescaling constant.
        #[arg(long, default_value = "off")]
        gamma: GammaMode,
        /// Fraction of the largest convergent gamma used by `--gamma auto`.
        #[arg(long, default_value_t = 0.95)]
        safety: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Truncate a canonical form to each requested rank, with bound certificates.
    Truncate {
        input: PathBuf,
        /// Comma-separated ranks, or `all`.
        #[arg(long, default_value = "all")]
        ranks: Ranks,
        /// Error target for the safe tree sizes.
        #[arg(long, default_value_t = 1e-2)]
        epsilon: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Tabulate l2 distance and perplexity of approximations against an original.
    Compare {
        original: PathBuf,
        #[arg(required = true)]
        approximations: Vec<PathBuf>,
        /// Test trees, one per line, for the perplexity column.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
        format: OutputFormat,
        #[command(flatten)]
        solver: SolverArgs,
        /// Write the table here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Weight of one tree, or of a word summed over all tree shapes.
    Eval {
        input: PathBuf,
        #[arg(long)]
        kind: Option<InputKind>,
        #[arg(long, conflicts_with = "word", required_unless_present = "word")]
        tree: Option<String>,
        #[arg(long)]
        word: Option<String>,
    },
    /// Print both Gram matrices and the convergence diagnostics.
    Gram {
        input: PathBuf,
        #[arg(long)]
        kind: Option<InputKind>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
        format: OutputFormat,
    },
    /// Largest rescaling constant for which the Gram iteration converges.
    Gamma {
        input: PathBuf,
        #[arg(long)]
        kind: Option<InputKind>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Convert between grammar, tree-bank and automaton formats.
    Convert {
        input: PathBuf,
        #[arg(long)]
        kind: Option<InputKind>,
        #[arg(long, value_enum)]
        to: OutputKind,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug, Clone, Copy)]
struct SolverArgs {
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long = "max-iter", default_value_t = 100_000)]
    max_iter: usize,
}

impl SolverArgs {
    fn options(&self) -> Result<SolverOptions> {
        let opts = SolverOptions {
            tolerance: self.tol,
            max_iterations: self.max_iter,
            ..SolverOptions::default()
        };
        opts.validate()?;
        Ok(opts)
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Wta,
    Wcfg,
    Treebank,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum OutputKind {
    Wta,
    Wcfg,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum OutputFormat {
    Csv,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum GammaMode {
    Off,
    Auto,
    Fixed(f64),
}

impl std::str::FromStr for GammaMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "off" => Ok(GammaMode::Off),
            "auto" => Ok(GammaMode::Auto),
            _ => match s.parse::<f64>() {
                Ok(g) if g > 0.0 && g.is_finite() => Ok(GammaMode::Fixed(g)),
                _ => Err(format!(
                    "expected `off`, `auto` or a positive number, got `{s}`"
                )),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Ranks {
    All,
    List(Vec<usize>),
}

impl std::str::FromStr for Ranks {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "all" {
            return Ok(Ranks::All);
        }
        s.split(',')
            .map(|r| {
                r.trim()
                    .parse::<usize>()
                    .map_err(|_| format!("bad rank `{r}`"))
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Ranks::List)
    }
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn infer_kind(path: &Path, kind: Option<InputKind>) -> Result<InputKind> {
    if let Some(k) = kind {
        return Ok(k);
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("wta") | Some("json") => Ok(InputKind::Wta),
        Some("wcfg") | Some("cfg") | Some("pcfg") => Ok(InputKind::Wcfg),
        Some("tb") | Some("treebank") | Some("mrg") => Ok(InputKind::Treebank),
        _ => Err(Error::Format {
            path: path.display().to_string(),
            message: "cannot infer input kind from the extension; pass --kind".into(),
        }),
    }
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io { .. } | Error::Format { .. } => e,
        other if !other.is_numerical() => Error::Format {
            path: path.display().to_string(),
            message: other.to_string(),
        },
        other => other,
    })
}

/// The series described by `path`. Automaton files carrying a `gamma` hold
/// the rescaled series, so they are mapped back by `1 / gamma`.
pub fn load_series(path: &Path, kind: Option<InputKind>) -> Result<Wta> {
    match infer_kind(path, kind)? {
        InputKind::Wta => {
            let file = WtaFile::read(path)?;
            Ok(match file.gamma {
                Some(g) => file.automaton.scale_gamma(1.0 / g),
                None => file.automaton,
            })
        }
        InputKind::Wcfg => {
            let text = read_text(path)?;
            with_path(path, parse_wcfg(&text).map(|g| wcfg_to_wta(&g)))
        }
        InputKind::Treebank => {
            let text = read_text(path)?;
            with_path(
                path,
                TreeBank::parse(&text)
                    .and_then(|b| estimate_mle(&b))
                    .map(|g| wcfg_to_wta(&g)),
            )
        }
    }
}

/// Shortest round-trip rendering.
fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Parse `--word`: whitespace-separated symbols, or single characters when
/// the word is one token that is not itself a symbol.
fn parse_word(a: &Wta, word: &str) -> Result<Vec<usize>> {
    let sigma = a.alphabet();
    let tokens: Vec<&str> = word.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(Error::EmptyString);
    }
    if tokens.len() == 1 && sigma.index_of(tokens[0]).is_none() {
        return tokens[0]
            .chars()
            .map(|c| sigma.lookup(&c.to_string()))
            .collect();
    }
    tokens.iter().map(|t| sigma.lookup(t)).collect()
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Io<'_> {
    fn warn(&mut self, msg: impl std::fmt::Display) {
        let _ = writeln!(self.err, "svta-kit: {msg}");
    }
}

fn cmd_svta(
    io: &mut Io,
    input: &Path,
    kind: Option<InputKind>,
    opts: &SolverOptions,
    gamma: GammaMode,
    safety: f64,
    out: &Path,
) -> Result<i32> {
    let series = load_series(input, kind)?;
    let gamma = match gamma {
        GammaMode::Off => None,
        GammaMode::Fixed(g) => Some(g),
        GammaMode::Auto => {
            if !(safety > 0.0 && safety <= 1.0) {
                return Err(Error::Syntax(format!(
                    "--safety must lie in (0, 1], got {safety}"
                )));
            }
            match max_convergent_gamma(&series, opts) {
                Ok(g) => Some(safety * g),
                Err(Error::NoUpperBracket { last_convergent }) => {
                    io.warn(format!(
                        "no divergence found up to gamma = {last_convergent}; using {safety} x that value"
                    ));
                    Some(safety * last_convergent)
                }
                Err(e) => return Err(e),
            }
        }
    };
    let scaled = match gamma {
        Some(g) => series.scale_gamma(g),
        None => series,
    };
    let (s, report) = tree_gram_fixed_point(&scaled, opts)?;
    let contraction = estimate_contraction(&scaled, &s);
    let svta = compute_svta(&scaled, opts)?;

    create_dir(out)?;
    WtaFile {
        automaton: svta.automaton.clone(),
        singular_values: Some(svta.singular_values.clone()),
        gamma,
    }
    .write(&out.join("svta.wta"))?;

    let mut text = String::new();
    let _ = writeln!(text, "input: {}", input.display());
    let _ = writeln!(text, "states: {} -> {}", scaled.n(), svta.effective_rank);
    if let Some(g) = gamma {
        let _ = writeln!(text, "gamma: {}", num(g));
    }
    let _ = writeln!(text, "iterations: {}", report.iterations);
    let _ = writeln!(text, "final_residual: {}", num(report.final_residual));
    let _ = writeln!(text, "residual_ratio: {}", num(report.contraction_estimate));
    let _ = writeln!(text, "spectral_radius_estimate: {}", num(contraction.rho));
    let _ = writeln!(text, "singular_values:");
    for v in &svta.singular_values {
        let _ = writeln!(text, "  {}", num(*v));
    }
    write_text(&out.join("convergence.txt"), &text)?;
    let _ = write!(io.out, "{text}");
    Ok(EXIT_OK)
}

fn cmd_truncate(io: &mut Io, input: &Path, ranks: &Ranks, epsilon: f64, out: &Path) -> Result<i32> {
    if !(epsilon > 0.0) {
        return Err(Error::Syntax(format!(
            "--epsilon must be positive, got {epsilon}"
        )));
    }
    let file = WtaFile::read(input)?;
    let sv = file.singular_values.clone().ok_or_else(|| Error::Format {
        path: input.display().to_string(),
        message: "not a canonical form: missing singular_values".into(),
    })?;
    let svta = with_path(input, Svta::from_parts(file.automaton, sv))?;
    let ranks: Vec<usize> = match ranks {
        Ranks::All => (1..=svta.effective_rank).collect(),
        Ranks::List(r) => r.clone(),
    };
    let cfg = BoundConfig {
        epsilon,
        ..BoundConfig::default()
    };
    let results: Vec<_> = ranks
        .par_iter()
        .map(|&k| truncate_svta_with(&svta, k, &cfg))
        .collect();

    create_dir(out)?;
    let mut failed = false;
    for (k, r) in ranks.iter().zip(results) {
        match r {
            Ok((wta, report)) => {
                let wta = match file.gamma {
                    Some(g) => wta.scale_gamma(1.0 / g),
                    None => wta,
                };
                WtaFile::plain(wta).write(&out.join(format!("trunc_{k}.wta")))?;
                write_text(&out.join(format!("trunc_{k}.bounds.csv")), &report.to_csv())?;
                let mut text = report.to_text();
                if let Some(g) = file.gamma {
                    let _ = writeln!(
                        text,
                        "bounds refer to the series rescaled by gamma = {}",
                        num(g)
                    );
                }
                write_text(&out.join(format!("trunc_{k}.bounds.txt")), &text)?;
                let _ = writeln!(io.out, "rank {k}: s_next = {}", num(report.s_next));
            }
            Err(e) => {
                io.warn(format!("rank {k} skipped: {e}"));
                failed = true;
            }
        }
    }
    Ok(if failed { EXIT_PARTIAL } else { EXIT_OK })
}

struct CompareRow {
    n_hat: usize,
    l2: f64,
    perplexity: Option<f64>,
    s_next: Option<f64>,
    bound_m3: Option<f64>,
}

fn cmd_compare(
    io: &mut Io,
    original: &Path,
    approximations: &[PathBuf],
    corpus: Option<&Path>,
    format: OutputFormat,
    opts: &SolverOptions,
    out: Option<&Path>,
) -> Result<i32> {
    let file = WtaFile::read(original)?;
    let reference = match file.gamma {
        Some(g) => file.automaton.scale_gamma(1.0 / g),
        None => file.automaton.clone(),
    };
    let test: Option<Vec<Tree>> = match corpus {
        Some(p) => Some(with_path(
            p,
            parse_corpus(&read_text(p)?, reference.alphabet()),
        )?),
        None => None,
    };
    let models = approximations
        .iter()
        .map(|p| load_series(p, Some(InputKind::Wta)))
        .collect::<Result<Vec<_>>>()?;
    let n = file.automaton.n();
    let sigma = reference.alphabet().len();

    let rows: Vec<(Result<f64>, Option<Result<f64>>)> = models
        .par_iter()
        .map(|m| {
            let l2 = l2_distance(&reference, m, opts);
            let ppl = test.as_ref().map(|t| perplexity(m, &reference, t));
            (l2, ppl)
        })
        .collect();

    let mut status = EXIT_OK;
    let mut table = Vec::new();
    for ((path, model), (l2, ppl)) in approximations.iter().zip(&models).zip(rows) {
        let l2 = match l2 {
            Ok(v) => v,
            Err(e) => {
                io.warn(format!("{}: {e}", path.display()));
                status = EXIT_PARTIAL;
                continue;
            }
        };
        let perplexity = match ppl {
            Some(Ok(v)) => Some(v),
            Some(Err(e)) => {
                io.warn(format!("{}: perplexity undefined: {e}", path.display()));
                status = EXIT_PARTIAL;
                None
            }
            None => None,
        };
        let n_hat = model.n();
        let s_next = file
            .singular_values
            .as_ref()
            .map(|sv| sv.get(n_hat).copied().unwrap_or(0.0));
        table.push(CompareRow {
            n_hat,
            l2,
            perplexity,
            s_next,
            bound_m3: s_next.map(|s| bound_cumulative(s, n, sigma, 3)),
        });
    }

    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    let mut text = String::new();
    match format {
        OutputFormat::Csv => {
            text.push_str("n_hat,params,l2,perplexity,s_next,bound_cumulative_M3\n");
            for r in &table {
                let _ = writeln!(
                    text,
                    "{},{},{},{},{},{}",
                    r.n_hat,
                    r.n_hat.pow(3),
                    num(r.l2),
                    opt(r.perplexity),
                    opt(r.s_next),
                    opt(r.bound_m3)
                );
            }
        }
        OutputFormat::Text => {
            for r in &table {
                let _ = writeln!(
                    text,
                    "n_hat {:>3}  params {:>7}  l2 {}  perplexity {}  s_next {}  bound_M3 {}",
                    r.n_hat,
                    r.n_hat.pow(3),
                    num(r.l2),
                    r.perplexity.map(num).unwrap_or_else(|| "-".into()),
                    r.s_next.map(num).unwrap_or_else(|| "-".into()),
                    r.bound_m3.map(num).unwrap_or_else(|| "-".into()),
                );
            }
        }
    }
    match out {
        Some(p) => write_text(p, &text)?,
        None => {
            let _ = write!(io.out, "{text}");
        }
    }
    Ok(status)
}

fn cmd_eval(
    io: &mut Io,
    input: &Path,
    kind: Option<InputKind>,
    tree: Option<&str>,
    word: Option<&str>,
) -> Result<i32> {
    let a = load_series(input, kind)?;
    let value = match (tree, word) {
        (Some(t), _) => a.evaluate(&parse_tree(t, a.alphabet())?)?,
        (None, Some(w)) => string_weight(&a, &parse_word(&a, w)?)?,
        (None, None) => return Err(Error::Syntax("pass --tree or --word".into())),
    };
    let _ = writeln!(io.out, "{}", num(value));
    Ok(EXIT_OK)
}

fn write_matrix(text: &mut String, m: &nalgebra::DMatrix<f64>, sep: &str) {
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| num(*v)).collect();
        let _ = writeln!(text, "{}", cells.join(sep));
    }
}

fn cmd_gram(
    io: &mut Io,
    input: &Path,
    kind: Option<InputKind>,
    opts: &SolverOptions,
    format: OutputFormat,
) -> Result<i32> {
    let a = load_series(input, kind)?;
    let grams = gram_matrices(&a, opts)?;
    let (s, _) = tree_gram_fixed_point(&a, opts)?;
    let rho = estimate_contraction(&a, &s);
    let mut text = String::new();
    match format {
        OutputFormat::Csv => {
            text.push_str("# tree gram\n");
            write_matrix(&mut text, &grams.g_trees, ",");
            text.push_str("# context gram\n");
            write_matrix(&mut text, &grams.g_contexts, ",");
        }
        OutputFormat::Text => {
            text.push_str("tree gram:\n");
            write_matrix(&mut text, &grams.g_trees, " ");
            text.push_str("context gram:\n");
            write_matrix(&mut text, &grams.g_contexts, " ");
            let _ = writeln!(text, "iterations: {}", grams.report.iterations);
            let _ = writeln!(text, "final_residual: {}", num(grams.report.final_residual));
            let _ = writeln!(text, "spectral_radius_estimate: {}", num(rho.rho));
        }
    }
    let _ = write!(io.out, "{text}");
    Ok(EXIT_OK)
}

fn cmd_gamma(
    io: &mut Io,
    input: &Path,
    kind: Option<InputKind>,
    opts: &SolverOptions,
) -> Result<i32> {
    let a = load_series(input, kind)?;
    let g = max_convergent_gamma(&a, opts)?;
    let _ = writeln!(io.out, "{}", num(g));
    Ok(EXIT_OK)
}

fn cmd_convert(input: &Path, kind: Option<InputKind>, to: OutputKind, out: &Path) -> Result<i32> {
    let a = load_series(input, kind)?;
    match to {
        OutputKind::Wta => WtaFile::plain(a).write(out)?,
        OutputKind::Wcfg => write_text(out, &wta_to_wcfg(&a).to_text())?,
    }
    Ok(EXIT_OK)
}

fn configure_threads(io: &mut Io) {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return;
    };
    match value.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            // Fails only if a pool already exists, e.g. on a second call in one process.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
        _ => io.warn(format!(
            "ignoring {THREADS_ENV}={value}: expected a positive integer"
        )),
    }
}

/// Run the CLI on `args` (including the program name), writing to the given
/// streams. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut io = Io { out, err };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(io.err, "{rendered}");
            } else {
                let _ = write!(io.out, "{rendered}");
            }
            return code;
        }
    };
    configure_threads(&mut io);
    let result = match &cli.command {
        Command::Svta {
            input,
            kind,
            solver,
            gamma,
            safety,
            out,
        } => solver
            .options()
            .and_then(|o| cmd_svta(&mut io, input, *kind, &o, *gamma, *safety, out)),
        Command::Truncate {
            input,
            ranks,
            epsilon,
            out,
        } => cmd_truncate(&mut io, input, ranks, *epsilon, out),
        Command::Compare {
            original,
            approximations,
            corpus,
            format,
            solver,
            out,
        } => solver.options().and_then(|o| {
            cmd_compare(
                &mut io,
                original,
                approximations,
                corpus.as_deref(),
                *format,
                &o,
                out.as_deref(),
            )
        }),
        Command::Eval {
            input,
            kind,
            tree,
            word,
        } => cmd_eval(&mut io, input, *kind, tree.as_deref(), word.as_deref()),
        Command::Gram {
            input,
            kind,
            solver,
            format,
        } => solver
            .options()
            .and_then(|o| cmd_gram(&mut io, input, *kind, &o, *format)),
        Command::Gamma {
            input,
            kind,
            solver,
        } => solver
            .options()
            .and_then(|o| cmd_gamma(&mut io, input, *kind, &o)),
        Command::Convert {
            input,
            kind,
            to,
            out,
        } => cmd_convert(input, *kind, *to, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            io.warn(&e);
            exit_code(&e)
        }
    }
}
