use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Distribution, IncrementalModel, ModelError};
use crate::trace::Token;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);
const DEFAULT_TOP_K: usize = 16;

#[derive(Serialize)]
struct Request<'a> {
    src: Vec<&'a str>,
    tgt: Vec<&'a str>,
    top_k: usize,
}

#[derive(Deserialize)]
struct Reply {
    tokens: Vec<String>,
    logprobs: Vec<f64>,
}

struct Channel {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    failed: Option<String>,
}

/// Scores through an external process speaking newline-delimited JSON.
///
/// Each request is `{"src":[..],"tgt":[..],"top_k":K}` on the child's stdin;
/// the child answers with one `{"tokens":[..],"logprobs":[..]}` line. The
/// source list ends with `"<eos>"` once the source is complete. Replies are
/// renormalized over the returned tokens and cached per prefix pair.
pub struct SubprocessModel {
    channel: Mutex<Channel>,
    cache: Mutex<ReplyCache>,
    timeout: Duration,
    top_k: usize,
}

type ReplyCache = HashMap<(Vec<Token>, Vec<Token>), Distribution>;

impl SubprocessModel {
    /// Spawns `command`, split with shell quoting rules.
    pub fn spawn(command: &str) -> Result<Self, ModelError> {
        let argv = shlex::split(command)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| ModelError::Process(format!("cannot parse command {command:?}")))?;
        Self::spawn_argv(&argv)
    }

    pub fn spawn_argv<S: AsRef<str>>(argv: &[S]) -> Result<Self, ModelError> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| ModelError::Process("empty command".into()))?;
        let mut child = Command::new(program.as_ref())
            .args(args.iter().map(AsRef::as_ref))
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ModelError::Process(format!("spawn {}: {e}", program.as_ref())))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(SubprocessModel {
            channel: Mutex::new(Channel {
                child,
                stdin,
                lines: rx,
                failed: None,
            }),
            cache: Mutex::new(HashMap::new()),
            timeout: DEFAULT_TIMEOUT,
            top_k: DEFAULT_TOP_K,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_top_k(mut self, top_k: usize) -> Self {
        self.top_k = top_k.max(1);
        self
    }

    fn query(&self, source: &[Token], target: &[Token]) -> Result<Distribution, ModelError> {
        let mut channel = self.channel.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(reason) = &channel.failed {
            return Err(ModelError::Process(reason.clone()));
        }
        let result = exchange(&mut channel, source, target, self.top_k, self.timeout);
        if let Err(e) = &result {
            // A request without a usable reply leaves the stream out of step,
            // so the channel is not reused afterwards.
            channel.failed = Some(format!("channel closed after: {e}"));
            let _ = channel.child.kill();
        }
        result
    }
}

fn exchange(
    channel: &mut Channel,
    source: &[Token],
    target: &[Token],
    top_k: usize,
    timeout: Duration,
) -> Result<Distribution, ModelError> {
    let request = Request {
        src: source.iter().map(Token::as_str).collect(),
        tgt: target.iter().map(Token::as_str).collect(),
        top_k,
    };
    let mut line = serde_json::to_string(&request).expect("request serializes");
    line.push('\n');
    channel
        .stdin
        .write_all(line.as_bytes())
        .and_then(|_| channel.stdin.flush())
        .map_err(|e| ModelError::Process(format!("write request: {e}")))?;
    let reply = match channel.lines.recv_timeout(timeout) {
        Ok(Ok(reply)) => reply,
        Ok(Err(e)) => return Err(ModelError::Process(format!("read reply: {e}"))),
        Err(RecvTimeoutError::Timeout) => return Err(ModelError::Timeout(timeout)),
        Err(RecvTimeoutError::Disconnected) => {
            let status = channel
                .child
                .try_wait()
                .ok()
                .flatten()
                .map_or_else(|| "stdout closed".to_string(), |s| s.to_string());
            return Err(ModelError::Process(format!("child exited ({status})")));
        }
    };
    parse_reply(&reply)
}

/// Parses one reply line into a renormalized distribution.
pub fn parse_reply(line: &str) -> Result<Distribution, ModelError> {
    let reply: Reply = serde_json::from_str(line)
        .map_err(|e| ModelError::Protocol(format!("malformed reply: {e}")))?;
    if reply.tokens.len() != reply.logprobs.len() {
        return Err(ModelError::Protocol(format!(
            "{} tokens but {} logprobs",
            reply.tokens.len(),
            reply.logprobs.len()
        )));
    }
    if reply.tokens.is_empty() {
        return Err(ModelError::Protocol("empty reply".into()));
    }
    let entries = reply
        .tokens
        .iter()
        .map(|t| Token::parse(t).map_err(|e| ModelError::Protocol(e.to_string())))
        .zip(reply.logprobs)
        .map(|(t, lp)| t.map(|t| (t, lp)))
        .collect::<Result<Vec<_>, _>>()?;
    Distribution::from_logprobs(entries).map_err(|e| ModelError::Protocol(e.to_string()))
}

impl IncrementalModel for SubprocessModel {
    fn next_distribution(
        &self,
        source_prefix: &[Token],
        target_prefix: &[Token],
    ) -> Result<Distribution, ModelError> {
        let key = (source_prefix.to_vec(), target_prefix.to_vec());
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let dist = self.query(source_prefix, target_prefix)?;
        self.cache.lock().unwrap().insert(key, dist.clone());
        Ok(dist)
    }

    fn vocabulary(&self) -> Vec<Token> {
        let cache = self.cache.lock().unwrap();
        let mut vocab: Vec<Token> = cache
            .values()
            .flat_map(|d| d.iter().map(|(t, _)| t.clone()))
            .filter(|t| !t.is_eos())
            .collect();
        vocab.sort();
        vocab.dedup();
        vocab
    }
}

impl Drop for SubprocessModel {
    fn drop(&mut self) {
        if let Ok(channel) = self.channel.get_mut() {
            let _ = channel.child.kill();
            let _ = channel.child.wait();
        }
    }
}
