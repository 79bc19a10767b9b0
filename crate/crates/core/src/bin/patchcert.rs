use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use patchcert::error::Error;
use patchcert::geometry::PatchSpec;
use patchcert::runner::{
    self, parse_masks, parse_patch, BackendKind, DatasetManifest, InlineImage, ManifestEntry, Mutation,
    RunConfig, RunOutcome,
};
use patchcert::synth::{generate_suite, SuiteParams};

const EXIT_CONFIG: u8 = 2;
const EXIT_VIOLATION: u8 = 3;
const EXIT_BACKEND: u8 = 4;

#[derive(Parser)]
#[command(name = "patchcert", version, about = "Certified multi-label classification under patch attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Defended and undefended clean predictions.
    Infer(RunArgs),
    /// Certified and location-aware bounds.
    Certify(RunArgs),
    /// Check every certified bound against an exhaustive attacker (synthetic backend only).
    Verify {
        #[command(flatten)]
        run: RunArgs,
        /// Corrupt one bound before checking (negative control).
        #[arg(long, value_name = "tp-lower|fn-upper|fp-upper")]
        mutate: Option<String>,
    },
    /// Certify over a grid of mask budgets and patch sizes.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Mask budgets, comma separated.
        #[arg(long, default_value = "2x2,4x4,6x6")]
        mask_grid: String,
        /// Patch sizes, comma separated.
        #[arg(long, default_value = "0.5%,2%,8%,32%")]
        patch_grid: String,
    },
    /// Write a random synthetic model and manifest.
    GenSynthetic {
        #[arg(long, env = "PATCHCERT_OUT", default_value = "synthetic")]
        out: PathBuf,
        #[arg(long, env = "PATCHCERT_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        images: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        /// Image size, `N` or `N1xN2`.
        #[arg(long, default_value = "12")]
        size: String,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Dataset manifest (JSONL).
    #[arg(long, env = "PATCHCERT_MANIFEST")]
    manifest: PathBuf,
    /// JSON run configuration; flags and environment variables override it.
    #[arg(long, env = "PATCHCERT_CONFIG")]
    config: Option<PathBuf>,
    /// Mask budget per axis, `K` or `K1xK2`.
    #[arg(long, env = "PATCHCERT_MASKS")]
    masks: Option<String>,
    /// Patch size: `P`, `P1xP2` or `F%` of the image area.
    #[arg(long, env = "PATCHCERT_PATCH")]
    patch: Option<String>,
    /// Threshold family list (`default`, `standard,high`, ...) or a file.
    #[arg(long, env = "PATCHCERT_THRESHOLDS")]
    thresholds: Option<String>,
    #[arg(long, env = "PATCHCERT_ATTACKER", value_name = "fn|fp|worst")]
    attacker: Option<String>,
    #[arg(long, env = "PATCHCERT_BACKEND", value_name = "synthetic|onnx")]
    backend: Option<String>,
    #[arg(long, env = "PATCHCERT_MODEL")]
    model: Option<PathBuf>,
    #[arg(long, env = "PATCHCERT_OUT")]
    out: Option<PathBuf>,
    #[arg(long, env = "PATCHCERT_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "PATCHCERT_WORKERS")]
    workers: Option<usize>,
    /// ONNX input size `HxW`.
    #[arg(long, env = "PATCHCERT_INPUT_SIZE")]
    input_size: Option<String>,
    /// ONNX resize policy: exact, nearest, bilinear, bicubic, lanczos3.
    #[arg(long, env = "PATCHCERT_RESIZE")]
    resize: Option<String>,
    /// The ONNX model emits logits.
    #[arg(long, env = "PATCHCERT_LOGITS")]
    logits: bool,
    /// Scores live in a low range; adds the low threshold family.
    #[arg(long, env = "PATCHCERT_LOW_SCORE")]
    low_score: bool,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_json_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(m) = &self.masks {
            cfg.masks = parse_masks(m)?;
        }
        if let Some(p) = &self.patch {
            cfg.patch = parse_patch(p)?;
        }
        if let Some(t) = &self.thresholds {
            cfg.thresholds = t.clone();
        }
        if let Some(a) = &self.attacker {
            cfg.attacker = a.parse()?;
        }
        if let Some(b) = &self.backend {
            cfg.backend = b.parse()?;
        }
        if let Some(m) = &self.model {
            cfg.model = Some(m.clone());
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(s) = &self.input_size {
            let (h, w) = parse_masks(s)
                .map_err(|_| Error::Config(format!("invalid input size '{s}', expected HxW")))?;
            cfg.onnx.input_height = h;
            cfg.onnx.input_width = w;
        }
        if let Some(r) = &self.resize {
            cfg.onnx.resize = r.clone();
        }
        cfg.onnx.logits |= self.logits;
        cfg.onnx.low_score_regime |= self.low_score;
        cfg.validate()?;
        Ok(cfg)
    }

    fn load(&self) -> Result<(RunConfig, DatasetManifest), Error> {
        let cfg = self.config()?;
        let manifest = DatasetManifest::load(&self.manifest)?;
        Ok((cfg, manifest))
    }
}

fn exit_for(e: &Error) -> u8 {
    if e.is_backend() {
        EXIT_BACKEND
    } else if e.is_config() || matches!(e, Error::Shape(_)) {
        EXIT_CONFIG
    } else {
        1
    }
}

fn report(outcome: &RunOutcome) -> u8 {
    if let Some(msg) = &outcome.skipped {
        println!("{msg}");
    }
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    for f in &outcome.failures {
        eprintln!("failed {}: {}", f.image_id, f.error);
    }
    if outcome.violations > 0 {
        eprintln!("{} bound violations", outcome.violations);
        EXIT_VIOLATION
    } else if !outcome.failures.is_empty() {
        EXIT_BACKEND
    } else {
        0
    }
}

fn split_list<T>(s: &str, parse: impl Fn(&str) -> Result<T, Error>) -> Result<Vec<T>, Error> {
    s.split(',').map(|v| parse(v.trim())).collect()
}

fn gen_synthetic(out: &PathBuf, seed: u64, images: usize, classes: usize, size: &str) -> Result<RunOutcome, Error> {
    let (n1, n2) = parse_masks(size).map_err(|_| Error::Config(format!("invalid size '{size}'")))?;
    let suite = generate_suite(
        seed,
        &SuiteParams {
            n1,
            n2,
            classes,
            images,
            ..SuiteParams::default()
        },
    )?;
    std::fs::create_dir_all(out)?;
    let model_path = out.join("model.json");
    std::fs::write(&model_path, suite.model.to_json()? + "\n")?;
    let manifest = DatasetManifest {
        num_classes: classes,
        entries: suite
            .items
            .iter()
            .map(|i| ManifestEntry {
                image_id: i.id.clone(),
                image: None,
                synthetic: Some(InlineImage::from_image(&i.image)),
                labels: i.labels.clone(),
            })
            .collect(),
        root: out.clone(),
    };
    let manifest_path = out.join("manifest.jsonl");
    manifest.write(std::io::BufWriter::new(std::fs::File::create(&manifest_path)?))?;
    Ok(RunOutcome {
        files: vec![model_path, manifest_path],
        ..RunOutcome::default()
    })
}

fn run(cli: Cli) -> Result<u8, Error> {
    let outcome = match cli.command {
        Command::Infer(args) => {
            let (cfg, m) = args.load()?;
            runner::run_infer(&cfg, &m)?
        }
        Command::Certify(args) => {
            let (cfg, m) = args.load()?;
            runner::run_certify(&cfg, &m)?
        }
        Command::Verify { run, mutate } => {
            let mutation = mutate.as_deref().map(str::parse::<Mutation>).transpose()?;
            let cfg = run.config()?;
            if cfg.backend != BackendKind::Synthetic {
                println!("verify: the {:?} backend cannot be attacked exhaustively; skipping", cfg.backend);
                return Ok(0);
            }
            let m = DatasetManifest::load(&run.manifest)?;
            runner::run_verify(&cfg, &m, mutation)?
        }
        Command::Sweep {
            run,
            mask_grid,
            patch_grid,
        } => {
            let (cfg, m) = run.load()?;
            let masks = split_list(&mask_grid, parse_masks)?;
            let patches: Vec<PatchSpec> = split_list(&patch_grid, parse_patch)?;
            runner::run_sweep(&cfg, &m, &masks, &patches)?.0
        }
        Command::GenSynthetic {
            out,
            seed,
            images,
            classes,
            size,
        } => gen_synthetic(&out, seed, images, classes, &size)?,
    };
    Ok(report(&outcome))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
