//! On-disk formats. Binary containers carry a magic tag, little-endian u32
//! dimensions and f32 payloads; everything else is line-oriented text.
//! Writers go through [`atomic_write`], so a crash never leaves a partial
//! file at the destination path.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{CorpusScore, PhraseMatchStat, RateStat, UtteranceScore};
use crate::filter::{FilterConfig, FilterReport, PhraseVerdict};
use crate::model::{AudioEmbeddingSeq, BiasModelWeights, ModelConfig};
use crate::nn::Matrix;
use crate::posterior::{PosteriorMatrix, F32_ROW_TOL};
use crate::vocab::{BiasingList, ContextPhrase, Provenance, Vocab, BLANK_TOKEN};

const POSTERIOR_MAGIC: &[u8; 6] = b"CPOST1";
const FEATURES_MAGIC: &[u8; 6] = b"CFEAT1";
const WEIGHTS_HEADER: &str = "ctxbias-weights v1";
const MANIFEST_HEADER: &str = "ctxbias-manifest v1";
const FILTER_REPORT_HEADER: &str = "ctxbias-filter-report v1";
const SCORE_REPORT_HEADER: &str = "ctxbias-score-report v1";

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

/// Write `bytes` to a sibling temp file, then rename it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

struct ByteReader<'a> {
    buf: &'a [u8],
    off: usize,
    file: String,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8], file: String) -> Self {
        ByteReader { buf, off: 0, file }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::parse(&self.file, format!("offset {}", self.off), message)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.off + n > self.buf.len() {
            return Err(self.err(format!(
                "needs {n} more bytes, file has {}",
                self.buf.len() - self.off
            )));
        }
        let out = &self.buf[self.off..self.off + n];
        self.off += n;
        Ok(out)
    }

    fn magic(&mut self, expect: &[u8; 6]) -> Result<()> {
        let got = self.take(6)?;
        if got != expect {
            return Err(Error::parse(
                &self.file,
                "offset 0",
                format!("bad magic: expected {:?}", String::from_utf8_lossy(expect)),
            ));
        }
        Ok(())
    }

    fn u32_le(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32_block(&mut self, count: usize) -> Result<Vec<f64>> {
        let b = self.take(count * 4)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.off != self.buf.len() {
            return Err(self.err(format!("{} trailing bytes", self.buf.len() - self.off)));
        }
        Ok(())
    }
}

fn checked_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::domain(format!("{what} {n} exceeds u32")))
}

/// Store a posterior as magic, frame and vocab counts, then row-major f32
/// log probabilities.
pub fn write_posterior(path: &Path, post: &PosteriorMatrix) -> Result<()> {
    let mut out = Vec::with_capacity(14 + 4 * post.log_data().len());
    out.extend_from_slice(POSTERIOR_MAGIC);
    out.extend_from_slice(&checked_u32(post.frames(), "frame count")?.to_le_bytes());
    out.extend_from_slice(&checked_u32(post.vocab_size(), "vocab size")?.to_le_bytes());
    for &x in post.log_data() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    atomic_write(path, &out)
}

/// Read a posterior file; rows are revalidated at the f32 storage tolerance.
pub fn read_posterior(path: &Path) -> Result<PosteriorMatrix> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader::new(&bytes, path_str(path));
    r.magic(POSTERIOR_MAGIC)?;
    let frames = r.u32_le()? as usize;
    let vocab = r.u32_le()? as usize;
    let data = r.f32_block(
        frames
            .checked_mul(vocab)
            .ok_or_else(|| Error::parse(path_str(path), "header", "frame * vocab overflows"))?,
    )?;
    r.finish()?;
    PosteriorMatrix::from_log_rows(frames, vocab, data, F32_ROW_TOL)
        .map_err(|e| Error::parse(path_str(path), "payload", e.to_string()))
}

/// Store audio embeddings as magic, frame and width counts, then row-major
/// f32 values.
pub fn write_features(path: &Path, feats: &AudioEmbeddingSeq) -> Result<()> {
    let m = feats.matrix();
    let mut out = Vec::with_capacity(14 + 4 * m.data().len());
    out.extend_from_slice(FEATURES_MAGIC);
    out.extend_from_slice(&checked_u32(m.rows(), "frame count")?.to_le_bytes());
    out.extend_from_slice(&checked_u32(m.cols(), "embedding width")?.to_le_bytes());
    for &x in m.data() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    atomic_write(path, &out)
}

pub fn read_features(path: &Path) -> Result<AudioEmbeddingSeq> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader::new(&bytes, path_str(path));
    r.magic(FEATURES_MAGIC)?;
    let frames = r.u32_le()? as usize;
    let dim = r.u32_le()? as usize;
    let data = r.f32_block(
        frames
            .checked_mul(dim)
            .ok_or_else(|| Error::parse(path_str(path), "header", "frame * width overflows"))?,
    )?;
    r.finish()?;
    let m = Matrix::from_vec(frames, dim, data)
        .map_err(|e| Error::parse(path_str(path), "payload", e.to_string()))?;
    Ok(AudioEmbeddingSeq::new(m))
}

/// One token per line, blank first. Tokens never contain whitespace.
pub fn write_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    let mut out = String::new();
    for tok in vocab.tokens() {
        out.push_str(tok);
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_vocab(path: &Path) -> Result<Vocab> {
    let text = fs::read_to_string(path)?;
    let tokens: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if tokens.first().map(String::as_str) != Some(BLANK_TOKEN) {
        return Err(Error::parse(
            path_str(path),
            "line 1",
            format!("first token must be {BLANK_TOKEN}"),
        ));
    }
    Vocab::new(tokens).map_err(|e| Error::parse(path_str(path), "tokens", e.to_string()))
}

/// One phrase per line; `#` lines are comments; a trailing tab plus `D`
/// marks a distractor. The no-bias entry is implicit and never written.
pub fn write_list(path: &Path, list: &BiasingList) -> Result<()> {
    let mut out = String::new();
    for (idx, phrase) in list.real_phrases() {
        out.push_str(phrase.text());
        if list.provenance(idx) == Some(Provenance::Distractor) {
            out.push_str("\tD");
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_list(path: &Path, vocab: &Vocab) -> Result<BiasingList> {
    let text = fs::read_to_string(path)?;
    let mut list = BiasingList::no_bias_only();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (body, prov) = match line.strip_suffix("\tD") {
            Some(stripped) => (stripped, Provenance::Distractor),
            None => (line, Provenance::TrueBias),
        };
        let phrase = ContextPhrase::new(body.trim(), vocab)
            .map_err(|e| Error::parse(path_str(path), format!("line {}", i + 1), e.to_string()))?;
        list.push(phrase, prov)
            .map_err(|e| Error::parse(path_str(path), format!("line {}", i + 1), e.to_string()))?;
    }
    Ok(list)
}

/// Tab-separated `utt_id<TAB>transcript` pairs, one per line. Transcripts
/// may be empty; ids must be unique.
pub fn write_transcripts(path: &Path, rows: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for (id, text) in rows {
        out.push_str(id);
        out.push('\t');
        out.push_str(text);
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_transcripts(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = || format!("line {}", i + 1);
        let (id, body) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path_str(path), at(), "expected utt_id<TAB>text"))?;
        if id.trim().is_empty() {
            return Err(Error::parse(path_str(path), at(), "empty utterance id"));
        }
        if let Some(prev) = seen.insert(id.to_string(), i + 1) {
            return Err(Error::parse(
                path_str(path),
                at(),
                format!("utterance id {id} already used on line {prev}"),
            ));
        }
        out.push((id.to_string(), body.to_string()));
    }
    Ok(out)
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn write_tensor(out: &mut String, name: &str, rows: usize, cols: Option<usize>, data: &[f64]) {
    match cols {
        Some(c) => {
            let _ = writeln!(out, "tensor {name} {rows}x{c}");
            for r in 0..rows {
                let line: Vec<String> = data[r * c..(r + 1) * c]
                    .iter()
                    .map(|&x| fmt_f64(x))
                    .collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        None => {
            let _ = writeln!(out, "tensor {name} {rows}");
            let line: Vec<String> = data.iter().map(|&x| fmt_f64(x)).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
    }
}

/// Text weight bundle. Values print in Rust's shortest round-trip form, so
/// write-read-write is byte stable. The mandatory final
/// `share cpp.output ctc_linear` line records that the bias-prediction
/// output layer is the CTC linear itself; a bundle declaring a separate
/// `cpp.output.*` tensor is rejected.
pub fn write_weights(path: &Path, w: &BiasModelWeights) -> Result<()> {
    w.validate()?;
    let c = w.config;
    let mut out = String::new();
    let _ = writeln!(out, "{WEIGHTS_HEADER}");
    let _ = writeln!(out, "config embed_dim {}", c.embed_dim);
    let _ = writeln!(out, "config lstm_hidden {}", c.lstm_hidden);
    let _ = writeln!(out, "config vocab_size {}", c.vocab_size);
    let _ = writeln!(out, "config n_heads {}", c.n_heads);
    let _ = writeln!(out, "config ln_eps {}", fmt_f64(c.ln_eps));

    let mat = |out: &mut String, name: &str, m: &Matrix| {
        write_tensor(out, name, m.rows(), Some(m.cols()), m.data());
    };
    let vec_ = |out: &mut String, name: &str, v: &[f64]| {
        write_tensor(out, name, v.len(), None, v);
    };
    mat(&mut out, "ce.fwd.w_ih", &w.ce_fwd.w_input);
    mat(&mut out, "ce.fwd.w_hh", &w.ce_fwd.w_hidden);
    vec_(&mut out, "ce.fwd.bias", &w.ce_fwd.bias);
    mat(&mut out, "ce.bwd.w_ih", &w.ce_bwd.w_input);
    mat(&mut out, "ce.bwd.w_hh", &w.ce_bwd.w_hidden);
    vec_(&mut out, "ce.bwd.bias", &w.ce_bwd.bias);
    mat(&mut out, "ce.readout.weight", &w.ce_readout_w);
    vec_(&mut out, "ce.readout.bias", &w.ce_readout_b);
    mat(&mut out, "attn.w_q", &w.attn_wq);
    mat(&mut out, "attn.w_k", &w.attn_wk);
    mat(&mut out, "attn.w_v", &w.attn_wv);
    mat(&mut out, "attn.w_o", &w.attn_wo);
    vec_(&mut out, "combiner.ln_audio.gain", &w.ln_audio_gain);
    vec_(&mut out, "combiner.ln_audio.bias", &w.ln_audio_bias);
    vec_(&mut out, "combiner.ln_ctx.gain", &w.ln_ctx_gain);
    vec_(&mut out, "combiner.ln_ctx.bias", &w.ln_ctx_bias);
    mat(&mut out, "combiner.ff.weight", &w.ff_w);
    vec_(&mut out, "combiner.ff.bias", &w.ff_b);
    mat(&mut out, "cpp.hidden.weight", &w.cpp_w);
    vec_(&mut out, "cpp.hidden.bias", &w.cpp_b);
    mat(&mut out, "ctc_linear.weight", &w.ctc_w);
    vec_(&mut out, "ctc_linear.bias", &w.ctc_b);
    let _ = writeln!(out, "share cpp.output ctc_linear");
    atomic_write(path, out.as_bytes())
}

struct WeightsParser<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    file: String,
}

impl<'a> WeightsParser<'a> {
    fn err(&self, line_no: usize, message: impl Into<String>) -> Error {
        Error::parse(&self.file, format!("line {line_no}"), message)
    }

    fn next_content(&mut self) -> Option<(usize, &'a str)> {
        for (i, line) in self.lines.by_ref() {
            let t = line.trim();
            if !t.is_empty() {
                return Some((i + 1, t));
            }
        }
        None
    }

    fn floats(&self, line_no: usize, line: &str, expect: usize) -> Result<Vec<f64>> {
        let vals: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(str::parse).collect();
        let vals = vals.map_err(|e| self.err(line_no, format!("bad float: {e}")))?;
        if vals.len() != expect {
            return Err(self.err(
                line_no,
                format!("expected {expect} values, found {}", vals.len()),
            ));
        }
        for &v in &vals {
            if !v.is_finite() {
                return Err(self.err(line_no, "weights must be finite"));
            }
        }
        Ok(vals)
    }
}

pub fn read_weights(path: &Path) -> Result<BiasModelWeights> {
    let text = fs::read_to_string(path)?;
    let mut p = WeightsParser {
        lines: text.lines().enumerate(),
        file: path_str(path),
    };

    let (no, header) = p
        .next_content()
        .ok_or_else(|| Error::parse(path_str(path), "line 1", "empty file"))?;
    if header != WEIGHTS_HEADER {
        return Err(p.err(no, format!("expected header {WEIGHTS_HEADER:?}")));
    }

    let mut config_vals: HashMap<String, f64> = HashMap::new();
    let mut tensors: HashMap<String, (usize, Option<usize>, Vec<f64>)> = HashMap::new();
    let mut share_seen = false;
    let mut pending: Option<(usize, &str)> = None;

    // Config lines come first so tensor shapes can be checked as they load.
    while let Some((no, line)) = p.next_content() {
        if let Some(rest) = line.strip_prefix("config ") {
            if !tensors.is_empty() {
                return Err(p.err(no, "config lines must precede tensors"));
            }
            let mut it = rest.split_whitespace();
            let (Some(key), Some(val), None) = (it.next(), it.next(), it.next()) else {
                return Err(p.err(no, "expected: config KEY VALUE"));
            };
            let parsed: f64 = val
                .parse()
                .map_err(|e| p.err(no, format!("bad config value: {e}")))?;
            if config_vals.insert(key.to_string(), parsed).is_some() {
                return Err(p.err(no, format!("duplicate config key {key}")));
            }
            continue;
        }
        pending = Some((no, line));
        break;
    }

    let get_dim = |key: &str| -> Result<usize> {
        let v = *config_vals
            .get(key)
            .ok_or_else(|| Error::parse(path_str(path), "config", format!("missing {key}")))?;
        if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
            return Err(Error::parse(
                path_str(path),
                "config",
                format!("{key} must be a small non-negative integer"),
            ));
        }
        Ok(v as usize)
    };
    let mut config = ModelConfig::new(
        get_dim("embed_dim")?,
        get_dim("lstm_hidden")?,
        get_dim("vocab_size")?,
        get_dim("n_heads")?,
    );
    if let Some(&eps) = config_vals.get("ln_eps") {
        config.ln_eps = eps;
    }
    config
        .validate()
        .map_err(|e| Error::parse(path_str(path), "config", e.to_string()))?;
    let (d, h, v) = (config.embed_dim, config.lstm_hidden, config.vocab_size);

    let expected: Vec<(&str, usize, Option<usize>)> = vec![
        ("ce.fwd.w_ih", 4 * h, Some(v)),
        ("ce.fwd.w_hh", 4 * h, Some(h)),
        ("ce.fwd.bias", 4 * h, None),
        ("ce.bwd.w_ih", 4 * h, Some(v)),
        ("ce.bwd.w_hh", 4 * h, Some(h)),
        ("ce.bwd.bias", 4 * h, None),
        ("ce.readout.weight", d, Some(4 * h)),
        ("ce.readout.bias", d, None),
        ("attn.w_q", d, Some(d)),
        ("attn.w_k", d, Some(d)),
        ("attn.w_v", d, Some(d)),
        ("attn.w_o", d, Some(d)),
        ("combiner.ln_audio.gain", d, None),
        ("combiner.ln_audio.bias", d, None),
        ("combiner.ln_ctx.gain", d, None),
        ("combiner.ln_ctx.bias", d, None),
        ("combiner.ff.weight", d, Some(2 * d)),
        ("combiner.ff.bias", d, None),
        ("cpp.hidden.weight", d, Some(d)),
        ("cpp.hidden.bias", d, None),
        ("ctc_linear.weight", v, Some(d)),
        ("ctc_linear.bias", v, None),
    ];
    let shape_of = |name: &str| expected.iter().find(|(n, _, _)| *n == name);

    loop {
        let (no, line) = match pending.take() {
            Some(x) => x,
            None => match p.next_content() {
                Some(x) => x,
                None => break,
            },
        };
        if line == "share cpp.output ctc_linear" {
            share_seen = true;
            continue;
        }
        if line.starts_with("share ") {
            return Err(p.err(no, "unknown share directive"));
        }
        let Some(rest) = line.strip_prefix("tensor ") else {
            return Err(p.err(no, format!("unexpected line {line:?}")));
        };
        let mut it = rest.split_whitespace();
        let (Some(name), Some(shape), None) = (it.next(), it.next(), it.next()) else {
            return Err(p.err(no, "expected: tensor NAME SHAPE"));
        };
        let Some(&(_, rows, cols)) = shape_of(name) else {
            return Err(p.err(no, format!("unknown tensor {name}")));
        };
        let declared: (usize, Option<usize>) = match shape.split_once('x') {
            Some((r, c)) => (
                r.parse()
                    .map_err(|e| p.err(no, format!("bad shape: {e}")))?,
                Some(
                    c.parse()
                        .map_err(|e| p.err(no, format!("bad shape: {e}")))?,
                ),
            ),
            None => (
                shape
                    .parse()
                    .map_err(|e| p.err(no, format!("bad shape: {e}")))?,
                None,
            ),
        };
        if declared != (rows, cols) {
            return Err(p.err(
                no,
                format!(
                    "tensor {name}: expected shape {rows}{}, found {shape}",
                    cols.map(|c| format!("x{c}")).unwrap_or_default()
                ),
            ));
        }
        let mut data = Vec::with_capacity(rows * cols.unwrap_or(1));
        let data_lines = if cols.is_some() { rows } else { 1 };
        let per_line = cols.unwrap_or(rows);
        for _ in 0..data_lines {
            let Some((dno, dline)) = p.next_content() else {
                return Err(p.err(no, format!("tensor {name}: truncated data")));
            };
            data.extend(p.floats(dno, dline, per_line)?);
        }
        if tensors
            .insert(name.to_string(), (rows, cols, data))
            .is_some()
        {
            return Err(p.err(no, format!("duplicate tensor {name}")));
        }
    }

    if !share_seen {
        return Err(Error::parse(
            path_str(path),
            "end of file",
            "missing `share cpp.output ctc_linear` directive",
        ));
    }

    let has_wv = tensors.contains_key("attn.w_v");
    let has_wo = tensors.contains_key("attn.w_o");
    let mut take_mat = |name: &str| -> Result<Matrix> {
        match tensors.remove(name) {
            Some((rows, Some(cols), data)) => Matrix::from_vec(rows, cols, data)
                .map_err(|e| Error::parse(path_str(path), name, e.to_string())),
            _ => Err(Error::parse(
                path_str(path),
                "end of file",
                format!("missing tensor {name}"),
            )),
        }
    };
    let mut w = BiasModelWeights::zeros(config)
        .map_err(|e| Error::parse(path_str(path), "config", e.to_string()))?;
    w.ce_fwd.w_input = take_mat("ce.fwd.w_ih")?;
    w.ce_fwd.w_hidden = take_mat("ce.fwd.w_hh")?;
    w.ce_bwd.w_input = take_mat("ce.bwd.w_ih")?;
    w.ce_bwd.w_hidden = take_mat("ce.bwd.w_hh")?;
    w.ce_readout_w = take_mat("ce.readout.weight")?;
    w.attn_wq = take_mat("attn.w_q")?;
    w.attn_wk = take_mat("attn.w_k")?;
    if has_wv {
        w.attn_wv = take_mat("attn.w_v")?;
    }
    if has_wo {
        w.attn_wo = take_mat("attn.w_o")?;
    }
    w.ff_w = take_mat("combiner.ff.weight")?;
    w.cpp_w = take_mat("cpp.hidden.weight")?;
    w.ctc_w = take_mat("ctc_linear.weight")?;

    let mut take_vec = |name: &str| -> Result<Vec<f64>> {
        match tensors.remove(name) {
            Some((_, None, data)) => Ok(data),
            _ => Err(Error::parse(
                path_str(path),
                "end of file",
                format!("missing tensor {name}"),
            )),
        }
    };
    w.ce_fwd.bias = take_vec("ce.fwd.bias")?;
    w.ce_bwd.bias = take_vec("ce.bwd.bias")?;
    w.ce_readout_b = take_vec("ce.readout.bias")?;
    w.ln_audio_gain = take_vec("combiner.ln_audio.gain")?;
    w.ln_audio_bias = take_vec("combiner.ln_audio.bias")?;
    w.ln_ctx_gain = take_vec("combiner.ln_ctx.gain")?;
    w.ln_ctx_bias = take_vec("combiner.ln_ctx.bias")?;
    w.ff_b = take_vec("combiner.ff.bias")?;
    w.cpp_b = take_vec("cpp.hidden.bias")?;
    w.ctc_b = take_vec("ctc_linear.bias")?;

    if let Some(name) = tensors.keys().next() {
        return Err(Error::parse(
            path_str(path),
            "end of file",
            format!("unused tensor {name}"),
        ));
    }
    w.validate()
        .map_err(|e| Error::parse(path_str(path), "weights", e.to_string()))?;
    Ok(w)
}

fn fmt_rate(stat_errors: usize, denom: usize) -> String {
    match denom {
        0 => format!("{stat_errors}/0 -"),
        _ => format!(
            "{stat_errors}/{denom} {:.4}",
            stat_errors as f64 / denom as f64
        ),
    }
}

/// Human-readable filtering record: configuration, per-phrase scores in
/// input order, and the kept count.
pub fn write_filter_report(
    path: &Path,
    report: &FilterReport,
    config: &FilterConfig,
) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{FILTER_REPORT_HEADER}");
    let _ = writeln!(out, "config window_scale {}", fmt_f64(config.window_scale));
    let _ = writeln!(out, "config stride {}", config.stride);
    let _ = writeln!(
        out,
        "config psc_threshold {}",
        fmt_f64(config.psc_threshold)
    );
    let _ = writeln!(
        out,
        "config soc_threshold {}",
        fmt_f64(config.soc_threshold)
    );
    let _ = writeln!(out, "config max_kept {}", config.max_kept);
    let _ = writeln!(out, "kept {}", report.kept);
    let c = &report.counters;
    let _ = writeln!(
        out,
        "counters stage_one {} stage_two {} windows {}",
        c.stage_one_scored, c.stage_two_scored, c.windows_scanned
    );
    for s in &report.scores {
        let verdict = match s.verdict {
            PhraseVerdict::Kept => "kept",
            PhraseVerdict::DroppedStage1 => "dropped_stage1",
            PhraseVerdict::DroppedStage2 => "dropped_stage2",
        };
        let soc = s.soc.map(fmt_f64).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "phrase {} {verdict} psc {} soc {soc} text {}",
            s.list_index,
            fmt_f64(s.psc),
            s.text
        );
    }
    atomic_write(path, out.as_bytes())
}

/// Corpus-level scoring summary with pooled counts.
#[derive(Debug, Clone, Default)]
pub struct ScoreSummary {
    pub corpus: CorpusScore,
    pub phrases: PhraseMatchStat,
}

impl ScoreSummary {
    /// One-line digest in the `WER (U-WER/B-WER)` table format.
    pub fn headline(&self) -> String {
        format!(
            "WER (U-WER/B-WER): {}",
            rate_triple(
                &self.corpus.overall,
                &self.corpus.unbiased,
                &self.corpus.biased
            )
        )
    }
}

/// `WER (U-WER/B-WER)` cell: percentages with two decimals, `-` where a
/// denominator is zero.
fn rate_triple(overall: &RateStat, unbiased: &RateStat, biased: &RateStat) -> String {
    let pct = |s: &RateStat| match s.rate() {
        Some(r) => format!("{:.2}", 100.0 * r),
        None => "-".into(),
    };
    format!("{} ({}/{})", pct(overall), pct(unbiased), pct(biased))
}

/// Corpus summary, pooled counts, then one `WER (U-WER/B-WER)` line per
/// utterance in the order given.
pub fn write_score_report(
    path: &Path,
    summary: &ScoreSummary,
    utterances: &[(String, UtteranceScore)],
) -> Result<()> {
    let c = &summary.corpus;
    let p = &summary.phrases;
    let mut out = String::new();
    let _ = writeln!(out, "{SCORE_REPORT_HEADER}");
    let _ = writeln!(out, "utterances {}", c.utterances);
    let _ = writeln!(
        out,
        "wer {}",
        fmt_rate(c.overall.errors, c.overall.denominator)
    );
    let _ = writeln!(
        out,
        "uwer {}",
        fmt_rate(c.unbiased.errors, c.unbiased.denominator)
    );
    let _ = writeln!(
        out,
        "bwer {}",
        fmt_rate(c.biased.errors, c.biased.denominator)
    );
    let _ = writeln!(out, "phrase_matched {}", p.matched);
    let _ = writeln!(out, "phrase_in_reference {}", p.in_reference);
    let _ = writeln!(out, "phrase_in_hypothesis {}", p.in_hypothesis);
    let fmt_opt = |o: Option<f64>| o.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    let _ = writeln!(out, "phrase_precision {}", fmt_opt(p.precision()));
    let _ = writeln!(out, "phrase_recall {}", fmt_opt(p.recall()));
    let _ = writeln!(out, "phrase_f1 {}", fmt_opt(p.f1()));
    let _ = writeln!(
        out,
        "corpus {}",
        rate_triple(&c.overall, &c.unbiased, &c.biased)
    );
    for (id, u) in utterances {
        let _ = writeln!(
            out,
            "utt {id} {}",
            rate_triple(&u.overall, &u.unbiased, &u.biased)
        );
    }
    atomic_write(path, out.as_bytes())
}

/// Record of one tool invocation: command, arguments, resolved seed, and
/// digests of every input and output file. Replaying re-runs the command
/// and verifies the digests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub args: Vec<String>,
    /// (sha256, path) pairs.
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<(String, String)>,
}

pub fn write_manifest(path: &Path, m: &RunManifest) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{MANIFEST_HEADER}");
    let _ = writeln!(out, "version {}", m.tool_version);
    let _ = writeln!(out, "command {}", m.command);
    if let Some(seed) = m.seed {
        let _ = writeln!(out, "seed {seed}");
    }
    for a in &m.args {
        let _ = writeln!(out, "arg {a}");
    }
    for (digest, p) in &m.inputs {
        let _ = writeln!(out, "input {digest} {p}");
    }
    for (digest, p) in &m.outputs {
        let _ = writeln!(out, "output {digest} {p}");
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path)?;
    let file = path_str(path);
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(Error::parse(&file, "line 1", "empty file"));
    };
    if header.trim() != MANIFEST_HEADER {
        return Err(Error::parse(
            &file,
            "line 1",
            format!("expected header {MANIFEST_HEADER:?}"),
        ));
    }
    let mut m = RunManifest {
        tool_version: String::new(),
        command: String::new(),
        seed: None,
        args: Vec::new(),
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    for (i, raw) in lines {
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        let at = || format!("line {}", i + 1);
        let (key, rest) = line
            .split_once(' ')
            .ok_or_else(|| Error::parse(&file, at(), "expected KEY VALUE"))?;
        match key {
            "version" => m.tool_version = rest.to_string(),
            "command" => m.command = rest.to_string(),
            "seed" => {
                m.seed = Some(
                    rest.parse()
                        .map_err(|e| Error::parse(&file, at(), format!("bad seed: {e}")))?,
                )
            }
            "arg" => m.args.push(rest.to_string()),
            "input" | "output" => {
                let (digest, p) = rest
                    .split_once(' ')
                    .ok_or_else(|| Error::parse(&file, at(), "expected DIGEST PATH"))?;
                if digest.len() != 64 || !digest.bytes().all(|b| b.is_ascii_hexdigit()) {
                    return Err(Error::parse(&file, at(), "digest must be 64 hex chars"));
                }
                let entry = (digest.to_string(), p.to_string());
                if key == "input" {
                    m.inputs.push(entry);
                } else {
                    m.outputs.push(entry);
                }
            }
            _ => return Err(Error::parse(&file, at(), format!("unknown key {key}"))),
        }
    }
    if m.command.is_empty() {
        return Err(Error::parse(&file, "end of file", "missing command line"));
    }
    Ok(m)
}
