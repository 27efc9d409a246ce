use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use segdelim::attnlens::{self, Aggregation, TokenRoles};
use segdelim::corpusstats;
use segdelim::delimit::{self};
use segdelim::evalclient::{self, ModelEndpoint};
use segdelim::promptkit::{self, InputFormat, PromptMode, Regime, TaskTemplate};
use segdelim::textseg::{self, Document, Segmenter};
use segdelim::tokenize::{self, SnapPolicy, Vocabulary};

#[derive(Parser)]
#[command(name = "segdelim", about = "Sentence-boundary delimiter toolkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect sentence boundaries (or validate external ones) and write a boundary file
    Segment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// validate and pass through an externally produced boundary file
        #[arg(long)]
        external: Option<PathBuf>,
        /// abbreviation list override, one entry per line
        #[arg(long)]
        abbrev: Option<PathBuf>,
    },
    /// Tokenize a document, growing (and saving) the vocabulary
    Tokenize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// register special tokens before tokenizing (repeatable)
        #[arg(long)]
        special: Vec<String>,
        /// error on unknown tokens instead of growing the vocabulary
        #[arg(long)]
        freeze_vocab: bool,
        /// also map these boundaries to token indices
        #[arg(long)]
        bounds: Option<PathBuf>,
        /// error when a boundary falls inside a token instead of snapping right
        #[arg(long)]
        strict_boundaries: bool,
    },
    /// Insert delimiters under a placement strategy
    Insert {
        /// sentence | chunk:N | random:SEED
        #[arg(long)]
        strategy: String,
        #[arg(long)]
        delimiter: String,
        #[arg(long = "in")]
        input: PathBuf,
        /// boundary file; computed with the rule segmenter when omitted
        #[arg(long)]
        bounds: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Transform an instruction dataset into delimiter-inserted SFT data
    Transform {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "<seg>")]
        delimiter: String,
        /// comma-separated category names to drop
        #[arg(long, value_delimiter = ',')]
        filter: Vec<String>,
        #[arg(long, default_value = "normalized")]
        format: InputFormat,
    },
    /// Assemble a few-shot prompt and print it
    Prompt {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        mode: PromptMode,
        #[arg(long, default_value = "<seg>")]
        delimiter: String,
        #[arg(long)]
        query: String,
        /// JSONL of {question, answer} exemplars
        #[arg(long)]
        exemplars: Option<PathBuf>,
        /// override the built-in shot count
        #[arg(long)]
        shots: Option<usize>,
        #[arg(long)]
        sft: bool,
        #[arg(long)]
        large_model: bool,
    },
    /// Run a base/seg evaluation against a chat-completions endpoint
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// base | seg | both
        #[arg(long, default_value = "both")]
        mode: String,
        #[arg(long)]
        endpoint: PathBuf,
        #[arg(long, default_value = "<seg>")]
        delimiter: String,
        /// benchmark name selecting the built-in template
        #[arg(long)]
        task: String,
        #[arg(long)]
        sft: bool,
        #[arg(long)]
        large_model: bool,
        /// directory for report JSON and markdown
        #[arg(long, default_value = "eval-out")]
        out: PathBuf,
    },
    /// Relative delimiter-attention report and heatmaps
    Attn {
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long)]
        roles: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// layer:L,head:H,out.svg (repeatable)
        #[arg(long)]
        heatmap: Vec<String>,
        #[arg(long)]
        per_layer: bool,
        /// token labels (JSON array of strings) for heatmap axes
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Fig.-2-style corpus statistics and histograms
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "text")]
        field: String,
        #[arg(long, default_value_t = 1)]
        bin_width: usize,
    },
}

fn read_document(path: &PathBuf) -> Result<Document> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "doc".into());
    Ok(Document::new(id, text))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Segment {
            input,
            out,
            external,
            abbrev,
        } => {
            let doc = read_document(&input)?;
            let bounds = match external {
                Some(path) => textseg::load_boundaries(&path, &doc)?,
                None => {
                    let segmenter = match abbrev {
                        Some(path) => Segmenter::from_abbreviation_file(&path)?,
                        None => Segmenter::default(),
                    };
                    segmenter.segment(&doc)?
                }
            };
            textseg::save_boundaries(&out, &bounds)?;
            eprintln!("{} sentences -> {}", bounds.len(), out.display());
        }
        Command::Tokenize {
            input,
            vocab,
            special,
            freeze_vocab,
            bounds,
            strict_boundaries,
        } => {
            let doc = read_document(&input)?;
            let mut v = if vocab.exists() {
                Vocabulary::load(&vocab)?
            } else {
                Vocabulary::new()
            };
            for s in &special {
                v.register_special(s)?;
            }
            if freeze_vocab {
                v.freeze();
            }
            let tt = tokenize::tokenize(&mut v, &doc.text)?;
            if let Some(bounds_path) = bounds {
                let b = textseg::load_boundaries(&bounds_path, &doc)?;
                let policy = if strict_boundaries {
                    SnapPolicy::Error
                } else {
                    SnapPolicy::SnapRight
                };
                let idx = tokenize::char_to_token_boundaries(&b, &tt, policy)?;
                println!("{}", serde_json::to_string(&idx)?);
            } else {
                println!("{}", serde_json::to_string_pretty(&tt.tokens)?);
            }
            if !freeze_vocab {
                v.save(&vocab)?;
            }
            eprintln!("{} tokens, vocab size {}", tt.len(), v.len());
        }
        Command::Insert {
            strategy,
            delimiter,
            input,
            bounds,
            out,
            plan,
        } => {
            let doc = read_document(&input)?;
            let d = delimit::spec_for(&delimiter);
            let load_bounds = |doc: &Document| -> Result<textseg::Boundaries> {
                Ok(match &bounds {
                    Some(path) => textseg::load_boundaries(path, doc)?,
                    None => textseg::segment_rule(doc)?,
                })
            };
            let (text, plan_value) = match strategy.split_once(':') {
                None if strategy == "sentence" => {
                    let b = load_bounds(&doc)?;
                    delimit::insert_at_sentences(&doc, &b, &d)
                }
                Some(("chunk", n)) => {
                    let n: usize = n.parse().context("chunk size")?;
                    let mut v = Vocabulary::new();
                    v.register_special(&d.literal).ok();
                    let tt = tokenize::tokenize(&mut v, &doc.text)?;
                    delimit::insert_fixed_chunks(&tt, n, &d)?
                }
                Some(("random", seed)) => {
                    let seed: u64 = seed.parse().context("random seed")?;
                    let b = load_bounds(&doc)?;
                    let mut v = Vocabulary::new();
                    v.register_special(&d.literal).ok();
                    let tt = tokenize::tokenize(&mut v, &doc.text)?;
                    delimit::insert_random(&tt, b.len(), seed, &d)?
                }
                _ => bail!("unknown strategy {strategy:?} (sentence | chunk:N | random:SEED)"),
            };
            std::fs::write(&out, &text)?;
            if let Some(plan_path) = plan {
                std::fs::write(&plan_path, serde_json::to_string_pretty(&plan_value)?)?;
            }
            eprintln!("{} delimiters -> {}", plan_value.positions.len(), out.display());
        }
        Command::Transform {
            input,
            out,
            delimiter,
            filter,
            format,
        } => {
            let d = delimit::spec_for(&delimiter);
            let report = promptkit::transform_sft_dataset(&input, &out, &d, &filter, format)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Prompt {
            dataset,
            mode,
            delimiter,
            query,
            exemplars,
            shots,
            sft,
            large_model,
        } => {
            let regime = if sft { Regime::Sft } else { Regime::Icl };
            let mut tmpl = TaskTemplate::builtin(&dataset, regime, large_model)?;
            if let Some(shots) = shots {
                tmpl.n_shot = shots;
            }
            let exemplars = match exemplars {
                Some(path) => load_exemplars(&path)?,
                None => vec![],
            };
            let d = delimit::spec_for(&delimiter);
            let prompt = promptkit::build_icl_prompt(&exemplars, &query, &tmpl, mode, &d)?;
            println!("{}", prompt.text());
        }
        Command::Eval {
            dataset,
            mode,
            endpoint,
            delimiter,
            task,
            sft,
            large_model,
            out,
        } => {
            let ep = ModelEndpoint::load(&endpoint)?;
            let regime = if sft { Regime::Sft } else { Regime::Icl };
            let tmpl = TaskTemplate::builtin(&task, regime, large_model)?;
            let d = delimit::spec_for(&delimiter);
            std::fs::create_dir_all(&out)?;
            let modes: Vec<PromptMode> = match mode.as_str() {
                "base" => vec![PromptMode::Base],
                "seg" => vec![PromptMode::Seg],
                "both" => vec![PromptMode::Base, PromptMode::Seg],
                other => bail!("unknown mode {other:?} (base | seg | both)"),
            };
            let mut reports = Vec::new();
            for m in modes {
                let report = evalclient::run_eval(&dataset, &ep, &tmpl, m, &d)?;
                let name = match m {
                    PromptMode::Base => "base",
                    PromptMode::Seg => "seg",
                };
                std::fs::write(
                    out.join(format!("report_{name}.json")),
                    serde_json::to_string_pretty(&report)?,
                )?;
                println!(
                    "{name}: {}/{} correct, accuracy {:.2} ({} failures)",
                    report.n_correct, report.n_items, report.accuracy_pct, report.failures
                );
                reports.push(report);
            }
            if let [base, seg] = reports.as_slice() {
                let row = evalclient::delta_report(base, seg)?;
                let table = evalclient::delta_table_markdown(std::slice::from_ref(&row));
                std::fs::write(out.join("delta.md"), &table)?;
                println!("{table}");
            }
        }
        Command::Attn {
            tensor,
            roles,
            report,
            heatmap,
            per_layer,
            labels,
        } => {
            let t = attnlens::load_attention(&tensor)?;
            let r = TokenRoles::load(&roles)?;
            let agg = if per_layer {
                Aggregation::PerLayer
            } else {
                Aggregation::MeanAll
            };
            let result = attnlens::relative_delimiter_attention(&t, &r, agg)?;
            std::fs::write(&report, serde_json::to_string_pretty(&result)?)?;
            println!(
                "ratio {:.4} (delim {:.6} / sent avg {:.6})",
                result.mean_all.ratio, result.mean_all.delim_score, result.mean_all.sent_avg_score
            );
            if !heatmap.is_empty() {
                let labels: Vec<String> = match labels {
                    Some(path) => serde_json::from_str(&std::fs::read_to_string(&path)?)?,
                    None => (0..t.seq_len).map(|i| i.to_string()).collect(),
                };
                for spec in heatmap {
                    let (layer, head, path) = parse_heatmap_spec(&spec)?;
                    attnlens::heatmap_svg(&t, layer, head, &labels, &path)?;
                    eprintln!("heatmap layer {layer} head {head} -> {}", path.display());
                }
            }
        }
        Command::Stats {
            input,
            vocab,
            out,
            field,
            bin_width,
        } => {
            let mut v = match &vocab {
                Some(path) if path.exists() => Vocabulary::load(path)?,
                _ => Vocabulary::new(),
            };
            let stats = corpusstats::corpus_stats(&input, &mut v, &field)?;
            corpusstats::export_histograms(&stats, &out, bin_width)?;
            if let Some(path) = vocab {
                v.save(&path)?;
            }
            println!(
                "{} items, {} sentences, median length {} tokens -> {}",
                stats.per_item_sentence_counts.len(),
                stats.total_sentences(),
                stats.sentence_length_summary.median,
                out.display()
            );
        }
    }
    Ok(())
}

fn load_exemplars(path: &PathBuf) -> Result<Vec<(String, String)>> {
    let content = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in content.lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line)?;
        let q = v["question"].as_str().context("exemplar missing question")?;
        let a = v["answer"].as_str().context("exemplar missing answer")?;
        out.push((q.to_string(), a.to_string()));
    }
    Ok(out)
}

/// "layer:0,head:3,out.svg"
fn parse_heatmap_spec(spec: &str) -> Result<(usize, usize, PathBuf)> {
    let parts: Vec<&str> = spec.splitn(3, ',').collect();
    if parts.len() != 3 {
        bail!("heatmap spec must be layer:L,head:H,PATH");
    }
    let layer = parts[0]
        .strip_prefix("layer:")
        .context("expected layer:L")?
        .parse()?;
    let head = parts[1]
        .strip_prefix("head:")
        .context("expected head:H")?
        .parse()?;
    Ok((layer, head, PathBuf::from(parts[2])))
}
