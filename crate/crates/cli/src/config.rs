//! Flat `key=value` config files merged beneath command-line flags.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Command;

use crate::CliError;

/// Parses `key=value` lines. Blank lines and `#` comments are skipped.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key=value", lineno + 1))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(format!("config line {}: empty key", lineno + 1));
        }
        if pairs.iter().any(|(seen, _)| *seen == key) {
            return Err(format!("config line {}: duplicate key {key:?}", lineno + 1));
        }
        pairs.push((key, v.trim().to_string()));
    }
    Ok(pairs)
}

/// Rewrites `argv` so config-file values precede the user's flags; with
/// `args_override_self` the later flags win.
pub fn merge(cmd: &Command, argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some((path, sub_at)) = scan(cmd, &argv) else {
        return Ok(argv);
    };
    let Some(sub_at) = sub_at else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let pairs = parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;

    let sub_name = argv[sub_at].to_string_lossy().into_owned();
    let sub = cmd.find_subcommand(&sub_name).expect("scan found a subcommand");
    let mut injected: Vec<OsString> = Vec::new();
    for (key, value) in pairs {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config" && key != "help")
            .ok_or_else(|| CliError::Usage(format!("unknown config key {key:?} for `{sub_name}`")))?;
        if arg.get_action().takes_values() {
            injected.push(format!("--{key}").into());
            injected.push(value.into());
        } else {
            match value.as_str() {
                "true" => injected.push(format!("--{key}").into()),
                "false" => {}
                _ => return Err(CliError::Usage(format!("config key {key:?} expects true or false"))),
            }
        }
    }
    let mut out = argv[..=sub_at].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[sub_at + 1..]);
    Ok(out)
}

/// Finds the `--config` path and the index of the subcommand token.
fn scan(cmd: &Command, argv: &[OsString]) -> Option<(PathBuf, Option<usize>)> {
    let mut path = None;
    let mut sub_at = None;
    let mut i = 1;
    while i < argv.len() {
        let tok = argv[i].to_string_lossy();
        if tok == "--config" {
            path = argv.get(i + 1).map(PathBuf::from);
            i += 2;
            continue;
        }
        if let Some(p) = tok.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        } else if sub_at.is_none() && !tok.starts_with('-') && cmd.find_subcommand(tok.as_ref()).is_some() {
            sub_at = Some(i);
        }
        i += 1;
    }
    path.map(|p| (p, sub_at))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_underscores() {
        let pairs = parse("# run\nproblem = logistic\n\nrecord_stride=4\n").unwrap();
        assert_eq!(
            pairs,
            vec![
                ("problem".to_string(), "logistic".to_string()),
                ("record-stride".to_string(), "4".to_string())
            ]
        );
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(parse("eta 0.5").is_err());
        assert!(parse("=3").is_err());
        assert!(parse("n=1\nn=2").is_err());
    }
}
