use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use subfig_core::corpus::{self, ManifestError};
use subfig_core::pipeline::{self, PipelineConfig, PipelineError, PipelineStats};
use subfig_core::retrieval::{self, RetrievalError};
use subfig_core::splitter::{self, DetectionEntry, SplitError, SplitterParams};

/// Align compound-figure panels with their subcaptions and score retrieval runs.
#[derive(Debug, Parser)]
#[command(name = "subfig", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment every caption of a manifest into labeled subcaptions.
    ParseCaptions {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Cut figure images along white gutters and write a detections file.
    SplitFigures {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Take figure ids and image paths from this manifest instead of file stems.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        white_threshold: Option<u8>,
        #[arg(long)]
        min_gutter: Option<u32>,
        #[arg(long)]
        min_panel: Option<u32>,
    },
    /// Match detector regions to subcaptions through OCR labels.
    Match {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        ocr: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = splitter::DEFAULT_MIN_SCORE)]
        min_score: f64,
        #[arg(long, default_value_t = subfig_core::matcher::DEFAULT_MIN_CONFIDENCE)]
        min_confidence: f64,
    },
    /// Run the whole pipeline from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print corpus statistics for a manifest.
    Stats {
        #[arg(long)]
        input: PathBuf,
        /// Record count before filtering; defaults to the manifest's record count.
        #[arg(long)]
        records_in: Option<usize>,
    },
    /// Image-to-text and text-to-image recall@k from two embedding files.
    EvalRetrieval {
        #[arg(long)]
        image_emb: PathBuf,
        #[arg(long)]
        text_emb: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = retrieval::DEFAULT_KS)]
        k: Vec<usize>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

/// Failure with its process exit code: 1 for usage/config, 2 for data.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl ToString) -> Self {
        Failure {
            code: 1,
            message: message.to_string(),
        }
    }

    fn data(message: impl ToString) -> Self {
        Failure {
            code: 2,
            message: message.to_string(),
        }
    }
}

impl From<ManifestError> for Failure {
    fn from(e: ManifestError) -> Self {
        match e {
            ManifestError::MissingFile(_) => Failure::usage(e),
            _ => Failure::data(e),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) => Failure::usage(e),
            PipelineError::Manifest(m) => m.into(),
            _ => Failure::data(e),
        }
    }
}

impl From<SplitError> for Failure {
    fn from(e: SplitError) -> Self {
        match e {
            SplitError::InvalidParams(_) => Failure::usage(e),
            _ => Failure::data(e),
        }
    }
}

impl From<RetrievalError> for Failure {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::KOutOfRange { .. } => Failure::usage(e),
            _ => Failure::data(e),
        }
    }
}

fn require_file(path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(format!("no such file: {}", path.display())))
    }
}

fn print_stats(stats: &PipelineStats) {
    println!("{}", serde_json::to_string_pretty(stats).expect("stats serialize"));
}

const IMAGE_EXTENSIONS: [&str; 7] = ["png", "jpg", "jpeg", "tif", "tiff", "bmp", "gif"];

fn image_files(dir: &Path) -> Result<Vec<(String, PathBuf)>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::usage(format!("{}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Failure::data(e.to_string()))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if let (true, Some(stem)) = (is_image, path.file_stem().and_then(|s| s.to_str())) {
            out.push((stem.to_owned(), path.clone()));
        }
    }
    out.sort();
    Ok(out)
}

fn split_figures(images: &Path, output: &Path, manifest: Option<&Path>, params: SplitterParams) -> Result<(), Failure> {
    params.validate()?;
    let figures = match manifest {
        Some(m) => corpus::load_manifest(m)?
            .records()
            .iter()
            .map(|r| (r.figure_id.clone(), images.join(&r.image_path)))
            .collect(),
        None => image_files(images)?,
    };
    let mut entries: Vec<DetectionEntry> = Vec::with_capacity(figures.len());
    let mut failed = 0usize;
    for (figure_id, path) in &figures {
        match splitter::split_image_file(figure_id, path, &params) {
            Ok(entry) => entries.push(entry),
            Err(e) => {
                failed += 1;
                log::warn!("skipping {figure_id}: {e}");
            }
        }
    }
    splitter::write_detections(output, &entries)?;
    eprintln!("split {} figures ({failed} skipped)", entries.len());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::ParseCaptions { input, output } => {
            let manifest = corpus::load_manifest(&input)?;
            pipeline::write_segments(&manifest, &output)?;
        }
        Command::SplitFigures {
            images,
            output,
            manifest,
            white_threshold,
            min_gutter,
            min_panel,
        } => {
            let defaults = SplitterParams::default();
            let params = SplitterParams {
                white_threshold: white_threshold.unwrap_or(defaults.white_threshold),
                min_gutter_px: min_gutter.unwrap_or(defaults.min_gutter_px),
                min_panel_px: min_panel.unwrap_or(defaults.min_panel_px),
                ..defaults
            };
            split_figures(&images, &output, manifest.as_deref(), params)?;
        }
        Command::Match {
            input,
            detections,
            ocr,
            output,
            min_score,
            min_confidence,
        } => {
            require_file(&detections)?;
            require_file(&ocr)?;
            let mut config = PipelineConfig::new(input, ocr, output);
            config.detections_file = Some(detections);
            config.min_score = min_score;
            config.min_confidence = min_confidence;
            let (_, stats) = pipeline::run_pipeline(&config)?;
            print_stats(&stats);
        }
        Command::Run { config } => {
            let config = PipelineConfig::from_file(&config)?;
            require_file(&config.ocr_file)?;
            if let Some(d) = &config.detections_file {
                require_file(d)?;
            }
            let (_, stats) = pipeline::run_pipeline(&config)?;
            print_stats(&stats);
        }
        Command::Stats { input, records_in } => {
            let manifest = corpus::load_manifest(&input)?;
            let records_in = records_in.unwrap_or(manifest.records().len());
            print_stats(&pipeline::compute_stats(&manifest, records_in));
        }
        Command::EvalRetrieval {
            image_emb,
            text_emb,
            k,
            json,
        } => {
            require_file(&image_emb)?;
            require_file(&text_emb)?;
            let images = retrieval::load_embeddings(&image_emb)?;
            let texts = retrieval::load_embeddings(&text_emb)?;
            let report = retrieval::eval_report(&images, &texts, &k)?;
            print!("{}", report.render_table());
            if let Some(path) = json {
                let mut text = serde_json::to_string_pretty(&report.to_json()).expect("report serializes");
                text.push('\n');
                fs::write(&path, text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
