//! The `attn-tree` command line.
//!
//! Exit codes: 0 on success, 1 on invalid input or configuration, 2 when
//! reading or writing files fails.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::attnstore::{synth_archive, write_archive, ArchiveReader, SynthMode};
use crate::error::{Error, Result};
use crate::matrixprep::MergeMode;
use crate::metrics::{adjacent_baseline_report, percent, positional_baseline, positional_tsv, EvalOptions};
use crate::mstdecode::{DecoderKind, RootStrategy};
use crate::sweep::{
    compare_variants, evaluate_cells, relation_heads_from_cells, relations_tsv, SweepOptions,
    SweepReport,
};
use crate::treebank::{load_conllu, Treebank};

#[derive(Debug, Parser)]
#[command(
    name = "attn-tree",
    version,
    about = "Decode dependency trees from attention archives and score them against UD treebanks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// CoNLL-U treebank file, or a directory searched for *.conllu (baseline only)
    #[arg(long, global = true)]
    pub treebank: Vec<PathBuf>,

    /// ATNA attention archive
    #[arg(long, global = true)]
    pub archive: Vec<PathBuf>,

    /// Output directory for reports and archives
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    /// Worker threads for sweeps (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,

    /// Minimum gold edges for a relation to get a best head
    #[arg(long = "min-support", global = true, default_value_t = 5)]
    pub min_support: usize,

    /// Root choice for Chu-Liu-Edmonds decoding: best or fixed:K
    #[arg(long, global = true, default_value = "best")]
    pub root: String,

    /// Subword merge: sum-mean (columns summed, rows averaged) or mean-mean
    #[arg(long, global = true, default_value = "sum-mean")]
    pub merge: String,

    /// Decoder: mst (undirected spanning tree) or cle (Chu-Liu-Edmonds)
    #[arg(long, global = true, value_enum, default_value_t = DecoderArg::Mst)]
    pub decoder: DecoderArg,

    /// Leave punct edges out of every score
    #[arg(long = "exclude-punct", global = true)]
    pub exclude_punct: bool,

    /// Seed for synthetic fixtures
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DecoderArg {
    Mst,
    Cle,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print an archive header
    Inspect {
        /// Archive to inspect
        archive: PathBuf,
    },
    /// Adjacent-branching and positional baselines per treebank
    Baseline,
    /// UUAS for every layer/head, plus the best head per relation
    Sweep,
    /// Best layer/head per relation only
    Relations,
    /// Per-layer deltas between two sweep reports (second minus first)
    Compare {
        /// Sweep report of the base variant
        base: PathBuf,
        /// Sweep report of the other variant
        other: PathBuf,
    },
    /// Write a synthetic archive for a treebank
    Synth {
        /// uniform, gold-oracle or adjacent
        #[arg(long, default_value = "gold-oracle")]
        mode: String,
        #[arg(long, default_value_t = 12)]
        layers: usize,
        #[arg(long, default_value_t = 12)]
        heads: usize,
        /// Split each token into up to this many subword pieces
        #[arg(long = "max-pieces", default_value_t = 1)]
        max_pieces: usize,
        #[arg(long = "model-tag", default_value = "synth")]
        model_tag: String,
    },
}

/// Validated settings for one invocation.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub treebanks: Vec<PathBuf>,
    pub archives: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub sweep: SweepOptions,
    pub seed: u64,
}

impl RunConfig {
    pub fn from_cli(cli: &Cli) -> Result<Self> {
        let root: RootStrategy = cli.root.parse()?;
        let merge: MergeMode = cli.merge.parse()?;
        let decoder = match cli.decoder {
            DecoderArg::Mst => DecoderKind::Mst,
            DecoderArg::Cle => DecoderKind::Cle(root),
        };
        for path in cli.treebank.iter().chain(&cli.archive) {
            if !path.exists() {
                return Err(Error::Config(format!("{} does not exist", path.display())));
            }
        }
        Ok(RunConfig {
            treebanks: cli.treebank.clone(),
            archives: cli.archive.clone(),
            output_dir: cli.out.clone(),
            sweep: SweepOptions {
                merge,
                decoder,
                eval: EvalOptions {
                    include_punct: !cli.exclude_punct,
                },
                workers: cli.workers,
                min_support: cli.min_support,
            },
            seed: cli.seed,
        })
    }

    fn one_treebank(&self) -> Result<Treebank> {
        match self.treebanks.as_slice() {
            [path] if path.is_file() => load_conllu(path),
            _ => Err(Error::Config("expected exactly one --treebank file".into())),
        }
    }

    fn one_archive(&self) -> Result<ArchiveReader> {
        match self.archives.as_slice() {
            [path] => ArchiveReader::open(path),
            _ => Err(Error::Config("expected exactly one --archive".into())),
        }
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.output_dir).map_err(|e| Error::io(&self.output_dir, e))?;
        let path = self.output_dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Collect treebank files; directories are searched recursively for *.conllu.
pub fn collect_treebank_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.extension().is_some_and(|e| e == "conllu") {
                out.push(path);
            }
        }
        Ok(())
    }

    let mut files = Vec::new();
    for path in paths {
        if path.is_dir() {
            let mut found = Vec::new();
            walk(path, &mut found)?;
            found.sort();
            files.extend(found);
        } else {
            files.push(path.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::Config("no CoNLL-U treebanks found".into()));
    }
    Ok(files)
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => 2,
        _ => 1,
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let config = RunConfig::from_cli(cli)?;
    match &cli.command {
        Command::Inspect { archive } => cmd_inspect(archive),
        Command::Baseline => cmd_baseline(&config),
        Command::Sweep => cmd_sweep(&config, true),
        Command::Relations => cmd_sweep(&config, false),
        Command::Compare { base, other } => cmd_compare(&config, base, other),
        Command::Synth {
            mode,
            layers,
            heads,
            max_pieces,
            model_tag,
        } => {
            let mode: SynthMode = mode.parse()?;
            cmd_synth(&config, mode, *layers, *heads, *max_pieces, model_tag)
        }
    }
}

fn cmd_inspect(archive: &Path) -> Result<()> {
    if !archive.exists() {
        return Err(Error::Config(format!("{} does not exist", archive.display())));
    }
    print!("{}", ArchiveReader::open(archive)?.describe());
    Ok(())
}

/// Adjacency baseline table for every treebank plus one positional table each.
pub fn cmd_baseline(config: &RunConfig) -> Result<()> {
    let files = collect_treebank_files(&config.treebanks)?;
    let eval = config.sweep.eval;

    let mut table = String::from("language\tcorrect\ttotal\tuuas\tpercent\n");
    for file in &files {
        let treebank = load_conllu(file)?;
        let adjacency = adjacent_baseline_report(&treebank, eval)?;
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            treebank.language,
            adjacency.correct_edges,
            adjacency.total_edges,
            adjacency.uuas(),
            percent(adjacency.uuas())
        ));
        let positional = positional_baseline(&treebank, eval)?;
        config.write(
            &format!("{}.positional.tsv", treebank.language),
            &positional_tsv(&positional),
        )?;
    }
    config.write("baseline.adjacency.tsv", &table)?;
    print!("{}", table);
    Ok(())
}

/// Sweep one archive over one treebank and write its reports.
pub fn cmd_sweep(config: &RunConfig, full: bool) -> Result<()> {
    let treebank = config.one_treebank()?;
    let archive = config.one_archive()?;
    let cells = evaluate_cells(&archive, &treebank, &config.sweep)?;
    let language = if archive.language().is_empty() {
        treebank.language.clone()
    } else {
        archive.language().to_owned()
    };
    let stem = format!("{}.{}", language, archive.model_tag());

    let relations = relation_heads_from_cells(&cells, config.sweep.min_support);
    config.write(&format!("{}.relations.tsv", stem), &relations_tsv(&relations))?;

    if full {
        let mut report = SweepReport::from_cells(&cells)?;
        report.language = language;
        config.write(&format!("{}.sweep.tsv", stem), &report.to_tsv())?;
        let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
        config.write(&format!("{}.sweep.json", stem), &json)?;
        let summary = report.summary_tsv();
        config.write(&format!("{}.summary.tsv", stem), &summary)?;
        print!("{}", summary);
    } else {
        print!("{}", relations_tsv(&relations));
    }
    Ok(())
}

fn read_report(path: &Path) -> Result<SweepReport> {
    if !path.exists() {
        return Err(Error::Config(format!("{} does not exist", path.display())));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SweepReport::from_tsv(&text, path)
}

fn report_stem(path: &Path) -> String {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("report");
    name.strip_suffix(".sweep.tsv").unwrap_or(name).to_owned()
}

pub fn cmd_compare(config: &RunConfig, base: &Path, other: &Path) -> Result<()> {
    let a = read_report(base)?;
    let b = read_report(other)?;
    let delta = compare_variants(&a, &b)?;
    let tsv = delta.to_tsv();
    config.write(
        &format!("{}_vs_{}.delta.tsv", report_stem(base), report_stem(other)),
        &tsv,
    )?;
    print!("{}", tsv);
    Ok(())
}

pub fn cmd_synth(
    config: &RunConfig,
    mode: SynthMode,
    layers: usize,
    heads: usize,
    max_pieces: usize,
    model_tag: &str,
) -> Result<()> {
    if layers == 0 || heads == 0 {
        return Err(Error::Config("--layers and --heads must be positive".into()));
    }
    let treebank = config.one_treebank()?;
    let archive = synth_archive(&treebank, mode, layers, heads, model_tag, max_pieces, config.seed);
    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    let path = config
        .output_dir
        .join(format!("{}.{}.atna", treebank.language, model_tag));
    write_archive(&archive, &path)?;
    println!("{}", path.display());
    Ok(())
}
