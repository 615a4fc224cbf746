//! Command-line entry point tying the pipeline together.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure.

mod commands;

use crate::config::Config;
use crate::error::{Error, Result};

const USAGE: &str = "\
imucontrast — IMU windows as RGB spectrograms with contrastive pre-training

USAGE:
  imucontrast <COMMAND> [FLAGS]

COMMANDS:
  convert    Convert IMU windows to spectrogram pixmaps plus a manifest
             --input <csv>  --out <dir>  [--config <cfg>] [--ckpt <file>]
  pretrain   Contrastive pre-training on an image corpus
             --out <ckpt>  [--corpus <dir> | --synth <n>] [--config <cfg>]
             [--resume <ckpt>] [--log <csv>]
  probe      Few-shot linear evaluation of a checkpoint
             --ckpt <file>  --out <csv>  [--input <csv>] [--config <cfg>]
             [--n <samples_per_class>]
  evaluate   Macro-F1 as a function of n over folds and seeds
             --ckpt <file>  --out <csv>  [--input <csv>] [--config <cfg>]
             [--n <comma list>]
  ablate     Augmentation-subset x sensory-variant robustness table
             --out <csv>  [--config <cfg>]
  gradcam    Class activation overlays for one window per class
             --ckpt <file>  --out <dir>  [--input <csv>] [--config <cfg>]
             [--stage <idx>]
  bench      Per-window conversion and inference timings (JSON lines)
             --ckpt <file>  [--window-seconds <s>] [--iters <k>]
             [--config <cfg>]

CONFIG:
  --config takes a path to an INI-style file, or the preset names
  `desk` and `paper`. Omitting it uses the desk preset. All keys and
  defaults are listed in presets/desk.cfg. Every command also accepts
  --threads <n> to cap worker threads (0 = automatic); results do not
  depend on the worker count.
";

/// Parsed command line: positional command plus --flag value pairs.
struct Args {
    flags: std::collections::BTreeMap<String, String>,
}

impl Args {
    fn parse(rest: &[String]) -> Result<Args> {
        let mut flags = std::collections::BTreeMap::new();
        let mut i = 0;
        while i < rest.len() {
            let flag = rest[i]
                .strip_prefix("--")
                .ok_or_else(|| Error::config(format!("expected --flag, got '{}'", rest[i])))?;
            let value = rest
                .get(i + 1)
                .ok_or_else(|| Error::config(format!("flag --{flag} needs a value")))?;
            if flags.insert(flag.to_string(), value.clone()).is_some() {
                return Err(Error::config(format!("flag --{flag} given twice")));
            }
            i += 2;
        }
        Ok(Args { flags })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.flags.get(key).map(String::as_str)
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::config(format!("missing required flag --{key}")))
    }

    fn finish(&self, allowed: &[&str]) -> Result<()> {
        for key in self.flags.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::config(format!("unknown flag --{key}")));
            }
        }
        Ok(())
    }
}

fn load_config(args: &Args) -> Result<Config> {
    match args.get("config") {
        None => Ok(Config::desk()),
        Some("desk") => Ok(Config::desk()),
        Some("paper") => Ok(Config::paper()),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Config::parse(&text)
        }
    }
}

/// Run the CLI; returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("{err}");
            err.exit_code()
        }
    }
}

fn dispatch(args: &[String]) -> Result<()> {
    let Some(command) = args.first() else {
        print!("{USAGE}");
        return Ok(());
    };
    if command == "--help" || command == "help" || command == "-h" {
        print!("{USAGE}");
        return Ok(());
    }
    let parsed = Args::parse(&args[1..])?;
    match command.as_str() {
        "convert" => commands::convert(&parsed),
        "pretrain" => commands::pretrain(&parsed),
        "probe" => commands::probe(&parsed),
        "evaluate" => commands::evaluate(&parsed),
        "ablate" => commands::ablate(&parsed),
        "gradcam" => commands::gradcam(&parsed),
        "bench" => commands::bench(&parsed),
        other => Err(Error::config(format!(
            "unknown command '{other}'; run with --help for usage"
        ))),
    }
}
