use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::models::IncrementalModel;
use crate::trace::Token;

#[derive(Deserialize)]
struct Request {
    src: Vec<String>,
    tgt: Vec<String>,
    #[serde(default)]
    top_k: Option<usize>,
}

#[derive(Serialize)]
struct Reply<'a> {
    tokens: Vec<&'a str>,
    logprobs: Vec<f64>,
}

#[derive(Serialize)]
struct ErrorReply {
    error: String,
}

fn parse_all(words: &[String]) -> Result<Vec<Token>, String> {
    words
        .iter()
        .map(|w| Token::parse(w).map_err(|e| e.to_string()))
        .collect()
}

/// Answers wire-protocol requests from `input` until end of input.
///
/// A request that cannot be scored gets an `{"error": ..}` line, which a
/// client treats as a protocol failure.
pub fn serve<M, R, W>(model: &M, input: R, mut output: W) -> std::io::Result<()>
where
    M: IncrementalModel + ?Sized,
    R: BufRead,
    W: Write,
{
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let answer = serde_json::from_str::<Request>(&line)
            .map_err(|e| e.to_string())
            .and_then(|req| {
                let src = parse_all(&req.src)?;
                let tgt = parse_all(&req.tgt)?;
                let dist = model
                    .next_distribution(&src, &tgt)
                    .map_err(|e| e.to_string())?;
                Ok((dist, req.top_k))
            });
        let text = match &answer {
            Ok((dist, top_k)) => {
                let keep = top_k.unwrap_or(usize::MAX).max(1);
                let (tokens, logprobs) = dist
                    .iter()
                    .take(keep)
                    .map(|(t, p)| (t.as_str(), p.ln()))
                    .unzip();
                serde_json::to_string(&Reply { tokens, logprobs })
            }
            Err(error) => serde_json::to_string(&ErrorReply {
                error: error.clone(),
            }),
        }
        .expect("replies serialize");
        writeln!(output, "{text}")?;
        output.flush()?;
    }
    Ok(())
}
