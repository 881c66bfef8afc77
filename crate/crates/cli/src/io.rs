//! Text-file formats shared by the subcommands: token streams (decimal ids,
//! one sequence per line), score lists, and key files.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use semmark::TokenId;

pub fn parse_token_line(line: &str) -> Result<Vec<TokenId>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<u32>()
                .map(TokenId)
                .with_context(|| format!("bad token id {tok:?}"))
        })
        .collect()
}

pub fn read_streams(path: &Path) -> Result<Vec<Vec<TokenId>>> {
    let file = std::fs::File::open(path).with_context(|| format!("open {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_token_line(&line).with_context(|| format!("line {}", i + 1))?);
    }
    if out.is_empty() {
        bail!("no token sequences in {}", path.display());
    }
    Ok(out)
}

pub fn write_streams(path: &Path, streams: &[Vec<TokenId>]) -> Result<()> {
    let mut file =
        std::fs::File::create(path).with_context(|| format!("create {}", path.display()))?;
    for seq in streams {
        let line: Vec<String> = seq.iter().map(|t| t.0.to_string()).collect();
        writeln!(file, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let file = std::fs::File::open(path).with_context(|| format!("open {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        for tok in line.split_whitespace() {
            out.push(
                tok.parse::<f64>()
                    .with_context(|| format!("bad score {tok:?} on line {}", i + 1))?,
            );
        }
    }
    if out.is_empty() {
        bail!("no scores in {}", path.display());
    }
    Ok(out)
}

pub fn read_key(path: &Path) -> Result<semmark::WatermarkKey> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("open {}", path.display()))?;
    Ok(semmark::WatermarkKey::from_hex(&text)?)
}
