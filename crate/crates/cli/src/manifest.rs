//! Run manifests: flat `key=value` files recording everything needed to
//! repeat a run.
//!
//! ```text
//! # oamil run manifest
//! tool_version=0.1.0
//! command="train"
//! data="runs/noisy.json"
//! mode="+oa-ie"
//! ...
//! config.mil.gamma=7.5
//! output.0="runs/oaie/model.ckpt"
//! ```
//!
//! Values are JSON literals. The plain keys are the command's flags and
//! drive reruns; `config.*` is a snapshot of the fully resolved
//! configuration and `output.*` lists the files the run writes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::args::Command;
use crate::CliError;

const HEADER: &str = "# oamil run manifest";

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: Command,
    pub config: Value,
    pub outputs: Vec<PathBuf>,
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                flatten(&format!("{prefix}.{k}"), x, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

impl RunManifest {
    pub fn new(command: Command, config: Value, outputs: Vec<PathBuf>) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            config,
            outputs,
        }
    }

    pub fn to_text(&self) -> Result<String, CliError> {
        let args = serde_json::to_value(&self.command)
            .map_err(|e| CliError::Manifest(format!("cannot record command: {e}")))?;
        let mut s = format!("{HEADER}\ntool_version={}\n", self.tool_version);
        if let Value::Object(m) = args {
            for (k, v) in m {
                let _ = writeln!(s, "{k}={v}");
            }
        }
        let mut config = Vec::new();
        flatten("config", &self.config, &mut config);
        for (k, v) in config {
            let _ = writeln!(s, "{k}={v}");
        }
        for (i, p) in self.outputs.iter().enumerate() {
            let _ = writeln!(s, "output.{i}={}", Value::from(p.display().to_string()));
        }
        Ok(s)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let bad = |n: usize, m: String| CliError::Manifest(format!("{origin}:{n}: {m}"));
        let mut tool_version = None;
        let mut args = Map::new();
        let mut config = Map::new();
        let mut outputs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| bad(n, "expected key=value".into()))?;
            if key == "tool_version" {
                tool_version = Some(raw.to_string());
                continue;
            }
            let value: Value = serde_json::from_str(raw).map_err(|e| bad(n, format!("value of `{key}`: {e}")))?;
            if let Some(path) = key.strip_prefix("config.") {
                insert_dotted(&mut config, path, value);
            } else if key.starts_with("output.") {
                let p = value
                    .as_str()
                    .ok_or_else(|| bad(n, "output paths must be strings".into()))?;
                outputs.push(PathBuf::from(p));
            } else {
                args.insert(key.to_string(), value);
            }
        }
        let command: Command = serde_json::from_value(Value::Object(args)).map_err(|e| bad(0, e.to_string()))?;
        Ok(RunManifest {
            tool_version: tool_version.ok_or_else(|| bad(0, "missing tool_version".into()))?,
            command,
            config: Value::Object(config),
            outputs,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = self.to_text()?;
        std::fs::write(path, text).map_err(|e| oamil::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| oamil::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text, &path.display().to_string())
    }
}

fn insert_dotted(map: &mut Map<String, Value>, path: &str, value: Value) {
    match path.split_once('.') {
        None => {
            map.insert(path.to_string(), value);
        }
        Some((head, rest)) => {
            let child = map
                .entry(head.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            if let Value::Object(m) = child {
                insert_dotted(m, rest, value);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::args::Cli;
    use clap::Parser;

    fn parse(argv: &[&str]) -> Command {
        Cli::try_parse_from(argv).unwrap().command
    }

    #[test]
    fn round_trips_every_command() {
        let commands = [
            parse(&["oamil", "gen-synth", "--scenes", "7", "--seed", "3", "--out", "a b.json"]),
            parse(&["oamil", "inject-noise", "--in", "x.json", "--r", "0.1", "--out", "y.json"]),
            parse(&["oamil", "train", "--data", "d.json", "--out", "run", "--lambda", "0.01", "--shared", "false"]),
            parse(&["oamil", "eval", "--model", "m", "--data", "d", "--out", "o.csv", "--split", "all"]),
            parse(&["oamil", "sweep", "--out", "s.csv", "--modes", "naive,is-loss-only", "--r-levels", "0.3"]),
            parse(&["oamil", "gradcheck", "--seed", "9"]),
        ];
        for c in commands {
            let config = serde_json::json!({"mil": {"gamma": 7.5, "theta": 0.1 + 0.2}, "seed": 3});
            let m = RunManifest::new(c, config, vec![PathBuf::from("out/a.csv")]);
            let text = m.to_text().unwrap();
            let back = RunManifest::parse(&text, "mem").unwrap();
            assert_eq!(back, m, "{text}");
        }
    }

    #[test]
    fn malformed_manifests_rejected() {
        assert!(RunManifest::parse("tool_version=1\ncommand=\"dance\"\n", "m").is_err());
        assert!(RunManifest::parse("tool_version=1\nno equals sign\n", "m").is_err());
        assert!(RunManifest::parse("command=\"gradcheck\"\nseed=1\nconfigurations=2\n", "m").is_err());
    }
}
