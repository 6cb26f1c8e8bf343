//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use thermosplat_core::gradcheck::{Scale, AUDIT_SEED};
use thermosplat_core::scene::SceneSpec;
use thermosplat_core::trainer::TrainConfig;

use crate::commands::{self, GRADCHECK_TOLERANCE};
use crate::error::Error;
use crate::{checkpoint, config, dataset};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "thermosplat", version, about = "RGB + thermal Gaussian splatting on the CPU")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene: dataset, resolved spec and ground-truth checkpoint.
    Genscene {
        /// Scene spec (TOML); written with every default if it does not exist.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Training config (TOML); written with every default if it does not exist.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one checkpoint camera: RGB PNG, thermal PFM (Celsius) and preview PNG, depth PFMs.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        view: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint against a dataset and write the metrics as JSON.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients of the full objective with central differences.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = ScaleArg::Tiny)]
        scale: ScaleArg,
        #[arg(long, default_value_t = AUDIT_SEED)]
        seed: u64,
        /// Finite-difference step (default 1e-4 for tiny, 1e-6 for small).
        #[arg(long)]
        h: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScaleArg {
    Tiny,
    Small,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Core(thermosplat_core::Error::Usage(m)) => Failure::Usage(m),
            e => Failure::Runtime(e),
        }
    }
}

/// Run with `argv` (program name first). Returns the process exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().ansi().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(stdout, "{text}");
                EXIT_OK
            };
        }
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(stderr, "error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(cmd: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, Failure> {
    match cmd {
        Command::Genscene { spec, out } => {
            let (s, created) = config::load_or_init::<SceneSpec>(&spec)?;
            if created {
                let _ = writeln!(stderr, "wrote default scene spec to {}", spec.display());
            }
            let scene = commands::genscene(&s, &out)?;
            let _ = writeln!(stdout, "{} views of {} Gaussians written to {}", scene.views.len(), scene.target.cloud.len(), out.display());
            Ok(EXIT_OK)
        }
        Command::Train { data, config: cfg_path, out } => {
            let (cfg, created) = config::load_or_init::<TrainConfig>(&cfg_path)?;
            if created {
                let _ = writeln!(stderr, "wrote default training config to {}", cfg_path.display());
            }
            let data = dataset::load(&data)?;
            let cfg = commands::resolve_for_dataset(cfg, &data);
            let outcome = commands::train(&data, &cfg, &out, stderr)?;
            if let Some(e) = outcome.stopped {
                let _ = writeln!(stderr, "error: training stopped after {} steps: {e}; last good model saved to {}", outcome.steps.len(), out.display());
                return Ok(EXIT_RUNTIME);
            }
            let _ = writeln!(stdout, "checkpoint written to {}", out.display());
            Ok(EXIT_OK)
        }
        Command::Render { ckpt, view, out } => {
            let ck = checkpoint::load(&ckpt)?;
            for f in commands::render(&ck, view, &out)? {
                let _ = writeln!(stdout, "{}", f.display());
            }
            Ok(EXIT_OK)
        }
        Command::Eval { ckpt, data, out } => {
            let ck = checkpoint::load(&ckpt)?;
            let data = dataset::load(&data)?;
            let summary = commands::evaluate(&ck, &data)?;
            let text = serde_json::to_string_pretty(&summary.to_json()).map_err(Error::from)? + "\n";
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(Error::io(parent))?;
            }
            std::fs::write(&out, &text).map_err(Error::io(&out))?;
            config::save(&out.with_extension("config.toml"), &ck.config)?;
            let _ = write!(stdout, "{text}");
            Ok(EXIT_OK)
        }
        Command::Gradcheck { scale, seed, h } => {
            let scale = match scale {
                ScaleArg::Tiny => Scale::Tiny,
                ScaleArg::Small => Scale::Small,
            };
            let report = commands::gradcheck(scale, seed, h)?;
            for (name, (err, n)) in report.per_name() {
                let _ = writeln!(stdout, "{name:<24} {n:>4} coords  max rel err {err:.3e}");
            }
            let worst = report.max_rel_error();
            let ok = worst <= GRADCHECK_TOLERANCE;
            let _ = writeln!(
                stdout,
                "{}: max relative error {worst:.3e} over {} coordinates (tolerance {GRADCHECK_TOLERANCE:.0e})",
                if ok { "PASS" } else { "FAIL" },
                report.checks.len()
            );
            if let (false, Some(w)) = (ok, &report.worst) {
                let _ = writeln!(stderr, "worst coordinate: {w:?}");
            }
            Ok(if ok { EXIT_OK } else { EXIT_RUNTIME })
        }
    }
}
