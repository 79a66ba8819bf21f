//! On-disk formats.
//!
//! Binary matrix files share a 28-byte little-endian header:
//!
//! | offset | size | field                                    |
//! |--------|------|------------------------------------------|
//! | 0      | 8    | magic, `LLEMBMAT` or `LLEMBPRF`          |
//! | 8      | 1    | version (1)                              |
//! | 9      | 1    | dtype: 1 = f32, 2 = f64, 3 = i8          |
//! | 10     | 2    | reserved, zero                           |
//! | 12     | 8    | rows (u64)                               |
//! | 20     | 8    | cols (u64)                               |
//!
//! followed by the row-major payload with no padding. `LLEMBMAT` holds real
//! matrices (dtype 1 or 2); `LLEMBPRF` holds ±1 outcomes (dtype 3).
//!
//! Text formats: a tab-separated manifest, `key=value` run configs, one id
//! per line, and CSV reports. Every writer replaces its target atomically
//! through a temporary file in the same directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::embeddings::{
    index_ids, FitState, ModelEmbeddings, PerformanceMatrix, PromptMatrix, Provenance,
};
use crate::error::{Error, Result};
use crate::evaluation::{Manifest, ReportRow};
use crate::linalg::{FitRoute, Matrix, PseudoinverseState, RegularizationConfig};

pub const MATRIX_MAGIC: &[u8; 8] = b"LLEMBMAT";
pub const PERF_MAGIC: &[u8; 8] = b"LLEMBPRF";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 28;
const PERF_DTYPE: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 1,
    F64 = 2,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to `path` via a temporary sibling file and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes).map_err(|e| format_err(path, format!("not valid UTF-8: {e}")))
}

fn header(magic: &[u8; 8], dtype: u8, rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(magic);
    out.push(FORMAT_VERSION);
    out.push(dtype);
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    out
}

/// Parses and checks the header; returns `(dtype, rows, cols)`.
fn parse_header(path: &Path, bytes: &[u8], magic: &[u8; 8]) -> Result<(u8, usize, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(
            path,
            format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
        ));
    }
    if &bytes[0..8] != magic {
        return Err(format_err(
            path,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[0..8]),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    if bytes[8] != FORMAT_VERSION {
        return Err(format_err(path, format!("unsupported version {} at offset 8", bytes[8])));
    }
    let dtype = bytes[9];
    if bytes[10..12] != [0, 0] {
        return Err(format_err(path, "reserved bytes at offset 10 are not zero"));
    }
    let rows = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let cols = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes"));
    let rows = usize::try_from(rows).map_err(|_| format_err(path, "row count overflows"))?;
    let cols = usize::try_from(cols).map_err(|_| format_err(path, "column count overflows"))?;
    Ok((dtype, rows, cols))
}

fn check_payload(path: &Path, bytes: &[u8], rows: usize, cols: usize, elem: usize) -> Result<()> {
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(elem))
        .ok_or_else(|| format_err(path, format!("declared size {rows}x{cols} overflows")))?;
    let actual = bytes.len() - HEADER_LEN;
    if actual != expected {
        return Err(format_err(
            path,
            format!(
                "payload is {actual} bytes but the header declares {rows}x{cols} \
                 ({expected} bytes)"
            ),
        ));
    }
    Ok(())
}

pub fn encode_matrix(matrix: &Matrix, dtype: Dtype) -> Result<Vec<u8>> {
    let mut out = header(MATRIX_MAGIC, dtype as u8, matrix.rows(), matrix.cols());
    out.reserve(matrix.as_slice().len() * dtype.size());
    for (k, &v) in matrix.as_slice().iter().enumerate() {
        match dtype {
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
            Dtype::F32 => {
                let narrow = v as f32;
                if !narrow.is_finite() {
                    return Err(Error::input(format!(
                        "value {v} at element {k} does not fit in 32 bits"
                    )));
                }
                out.extend_from_slice(&narrow.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_matrix(path: &Path, bytes: &[u8]) -> Result<Matrix> {
    let (dtype, rows, cols) = parse_header(path, bytes, MATRIX_MAGIC)?;
    let dtype = match dtype {
        1 => Dtype::F32,
        2 => Dtype::F64,
        other => {
            return Err(format_err(path, format!("unsupported matrix dtype {other} at offset 9")))
        }
    };
    check_payload(path, bytes, rows, cols, dtype.size())?;
    let payload = &bytes[HEADER_LEN..];
    let data: Vec<f64> = match dtype {
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect(),
    };
    if let Some(k) = data.iter().position(|v| !v.is_finite()) {
        return Err(format_err(
            path,
            format!(
                "non-finite value at offset {}",
                HEADER_LEN + k * dtype.size()
            ),
        ));
    }
    Matrix::new(rows, cols, data)
}

pub fn write_matrix(path: impl AsRef<Path>, matrix: &Matrix, dtype: Dtype) -> Result<()> {
    let bytes = encode_matrix(matrix, dtype)?;
    atomic_write(path.as_ref(), &bytes)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    decode_matrix(path, &read_bytes(path)?)
}

/// Raw outcome payload of a performance file, without ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerfPayload {
    pub rows: usize,
    pub cols: usize,
    pub outcomes: Vec<i8>,
}

impl PerfPayload {
    pub fn into_matrix(
        self,
        model_ids: Vec<String>,
        prompt_ids: Vec<String>,
    ) -> Result<PerformanceMatrix> {
        if model_ids.len() != self.rows || prompt_ids.len() != self.cols {
            return Err(Error::dims(
                "performance ids",
                format!("{} models x {} prompts", self.rows, self.cols),
                format!("{} model ids x {} prompt ids", model_ids.len(), prompt_ids.len()),
            ));
        }
        PerformanceMatrix::new(self.outcomes, model_ids, prompt_ids)
    }

    /// Attaches default ids: `model_<i>` and the column index.
    pub fn with_default_ids(self) -> Result<PerformanceMatrix> {
        let (m, n) = (self.rows, self.cols);
        self.into_matrix(index_ids("model_", m), index_ids("", n))
    }
}

pub fn encode_perf(rows: usize, cols: usize, outcomes: &[i8]) -> Result<Vec<u8>> {
    if outcomes.len() != rows * cols {
        return Err(Error::dims("performance payload", rows * cols, outcomes.len()));
    }
    if let Some(k) = outcomes.iter().position(|&v| v != 1 && v != -1) {
        return Err(Error::input(format!("outcome {} at element {k} is not ±1", outcomes[k])));
    }
    let mut out = header(PERF_MAGIC, PERF_DTYPE, rows, cols);
    out.extend(outcomes.iter().map(|&v| v as u8));
    Ok(out)
}

pub fn decode_perf(path: &Path, bytes: &[u8]) -> Result<PerfPayload> {
    let (dtype, rows, cols) = parse_header(path, bytes, PERF_MAGIC)?;
    if dtype != PERF_DTYPE {
        return Err(format_err(
            path,
            format!("unsupported performance dtype {dtype} at offset 9, expected 3"),
        ));
    }
    check_payload(path, bytes, rows, cols, 1)?;
    let payload = &bytes[HEADER_LEN..];
    let mut outcomes = Vec::with_capacity(payload.len());
    for (k, &b) in payload.iter().enumerate() {
        let v = b as i8;
        if v != 1 && v != -1 {
            return Err(format_err(
                path,
                format!(
                    "invalid outcome byte {v} at offset {} (row {}, column {}); expected +1 or -1",
                    HEADER_LEN + k,
                    k / cols.max(1),
                    k % cols.max(1)
                ),
            ));
        }
        outcomes.push(v);
    }
    Ok(PerfPayload {
        rows,
        cols,
        outcomes,
    })
}

pub fn write_perf(path: impl AsRef<Path>, perf: &PerformanceMatrix) -> Result<()> {
    let bytes = encode_perf(perf.n_models(), perf.n_prompts(), perf.outcomes())?;
    atomic_write(path.as_ref(), &bytes)
}

pub fn read_perf(path: impl AsRef<Path>) -> Result<PerfPayload> {
    let path = path.as_ref();
    decode_perf(path, &read_bytes(path)?)
}

pub const MANIFEST_HEADER: &str = "prompt_index\tbenchmark_id";

pub fn parse_manifest(path: &Path, text: &str) -> Result<Manifest> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == MANIFEST_HEADER => {}
        Some((_, h)) => {
            return Err(parse_err(1, format!("expected header {MANIFEST_HEADER:?}, got {h:?}")))
        }
        None => return Err(parse_err(1, "empty manifest".into())),
    }
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let (idx, id) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(lineno, format!("expected two tab-separated fields: {line:?}")))?;
        if id.contains('\t') {
            return Err(parse_err(lineno, "benchmark id contains a tab".into()));
        }
        let idx: usize = idx
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad prompt index {idx:?}")))?;
        if id.is_empty() {
            return Err(parse_err(lineno, "empty benchmark id".into()));
        }
        if !seen.insert(idx) {
            return Err(parse_err(lineno, format!("duplicate prompt_index {idx}")));
        }
        entries.push((idx, id.to_string()));
    }
    Manifest::new(entries).map_err(|e| format_err(path, e.to_string()))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    parse_manifest(path, &read_text(path)?)
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for (j, id) in manifest.benchmark_ids().iter().enumerate() {
        out.push_str(&format!("{j}\t{id}\n"));
    }
    atomic_write(path.as_ref(), out.as_bytes())
}

/// Settings shared by the command-line tools.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub epsilon: f64,
    pub lambda: f64,
    pub knn_k: usize,
    pub ns_max_iters: usize,
    pub ns_tol: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            epsilon: 0.0,
            lambda: 1.0,
            knn_k: 5,
            ns_max_iters: 50,
            ns_tol: 1e-10,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn regularization(&self) -> Result<RegularizationConfig> {
        RegularizationConfig::new(self.epsilon, self.lambda)
    }

    /// `key=value` lines in fixed key order.
    pub fn render(&self) -> String {
        format!(
            "epsilon={}\nlambda={}\nknn_k={}\nns_max_iters={}\nns_tol={}\nseed={}\n",
            self.epsilon, self.lambda, self.knn_k, self.ns_max_iters, self.ns_tol, self.seed
        )
    }
}

/// Splits `key=value` lines, skipping blanks and `#` comments.
fn key_values<'a>(path: &'a Path, text: &'a str) -> impl Iterator<Item = Result<(usize, &'a str, &'a str)>> + 'a {
    text.lines().enumerate().filter_map(move |(i, raw)| {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            return None;
        }
        Some(match line.split_once('=') {
            Some((k, v)) => Ok((i + 1, k.trim(), v.trim())),
            None => Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected key=value, got {raw:?}"),
            }),
        })
    })
}

fn parse_value<T: std::str::FromStr>(path: &Path, line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("invalid value {v:?} for `{key}`"),
    })
}

pub fn parse_config(path: &Path, text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for item in key_values(path, text) {
        let (line, key, value) = item?;
        match key {
            "epsilon" => cfg.epsilon = parse_value(path, line, key, value)?,
            "lambda" => cfg.lambda = parse_value(path, line, key, value)?,
            "knn_k" => cfg.knn_k = parse_value(path, line, key, value)?,
            "ns_max_iters" => cfg.ns_max_iters = parse_value(path, line, key, value)?,
            "ns_tol" => cfg.ns_tol = parse_value(path, line, key, value)?,
            "seed" => cfg.seed = parse_value(path, line, key, value)?,
            other => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("unknown config key `{other}`"),
                })
            }
        }
    }
    cfg.regularization().map_err(|e| format_err(path, e.to_string()))?;
    Ok(cfg)
}

pub fn read_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    parse_config(path, &read_text(path)?)
}

pub fn write_config(path: impl AsRef<Path>, config: &RunConfig) -> Result<()> {
    atomic_write(path.as_ref(), config.render().as_bytes())
}

pub fn render_provenance(p: &Provenance) -> String {
    format!(
        "format_version={FORMAT_VERSION}\nroute={}\nepsilon={}\nlambda={}\nn_prompts={}\ndim={}\nn_models={}\n",
        p.route.as_str(),
        p.config.epsilon,
        p.config.lambda,
        p.n_prompts,
        p.dim,
        p.n_models
    )
}

pub fn parse_provenance(path: &Path, text: &str) -> Result<Provenance> {
    let (mut epsilon, mut lambda) = (None, None);
    let (mut n_prompts, mut dim, mut n_models, mut route) = (None, None, None, None);
    for item in key_values(path, text) {
        let (line, key, value) = item?;
        match key {
            "format_version" => {
                let v: u8 = parse_value(path, line, key, value)?;
                if v != FORMAT_VERSION {
                    return Err(format_err(path, format!("unsupported format_version {v}")));
                }
            }
            "route" => {
                route = Some(FitRoute::parse(value).ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("unknown route {value:?}"),
                })?)
            }
            "epsilon" => epsilon = Some(parse_value(path, line, key, value)?),
            "lambda" => lambda = Some(parse_value(path, line, key, value)?),
            "n_prompts" => n_prompts = Some(parse_value(path, line, key, value)?),
            "dim" => dim = Some(parse_value(path, line, key, value)?),
            "n_models" => n_models = Some(parse_value(path, line, key, value)?),
            other => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("unknown provenance key `{other}`"),
                })
            }
        }
    }
    let missing = |k: &str| format_err(path, format!("missing provenance key `{k}`"));
    Ok(Provenance {
        config: RegularizationConfig::new(
            epsilon.ok_or_else(|| missing("epsilon"))?,
            lambda.ok_or_else(|| missing("lambda"))?,
        )?,
        n_prompts: n_prompts.ok_or_else(|| missing("n_prompts"))?,
        dim: dim.ok_or_else(|| missing("dim"))?,
        n_models: n_models.ok_or_else(|| missing("n_models"))?,
        route: route.ok_or_else(|| missing("route"))?,
    })
}

pub fn write_provenance(path: impl AsRef<Path>, p: &Provenance) -> Result<()> {
    atomic_write(path.as_ref(), render_provenance(p).as_bytes())
}

pub fn read_provenance(path: impl AsRef<Path>) -> Result<Provenance> {
    let path = path.as_ref();
    parse_provenance(path, &read_text(path)?)
}

pub fn write_model_ids(path: impl AsRef<Path>, ids: &[String]) -> Result<()> {
    let mut out = String::new();
    for id in ids {
        if id.is_empty() || id.contains(['\n', '\r']) || id.trim() != id {
            return Err(Error::input(format!(
                "model id {id:?} is empty, multi-line or has surrounding whitespace"
            )));
        }
        out.push_str(id);
        out.push('\n');
    }
    atomic_write(path.as_ref(), out.as_bytes())
}

pub fn parse_model_ids(path: &Path, text: &str) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if line.is_empty() {
            return Err(parse_err("blank line".into()));
        }
        if line.trim() != line {
            return Err(parse_err(format!("id {line:?} has surrounding whitespace")));
        }
        if !seen.insert(line) {
            return Err(parse_err(format!("duplicate id `{line}`")));
        }
        ids.push(line.to_string());
    }
    Ok(ids)
}

pub fn read_model_ids(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    parse_model_ids(path, &read_text(path)?)
}

pub const REPORT_HEADER: &str = "metric,value,stddev,benchmark_id";
const UNDEFINED: &str = "undefined";

/// 17 significant digits; parses back to the identical `f64`.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn render_report(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        let value = r.value.map_or_else(|| UNDEFINED.to_string(), format_real);
        let stddev = r.stddev.map(format_real).unwrap_or_default();
        let bench = r.benchmark_id.as_deref().map(csv_field).unwrap_or_default();
        out.push_str(&format!("{},{value},{stddev},{bench}\n", csv_field(&r.metric)));
    }
    out
}

pub fn write_report(path: impl AsRef<Path>, rows: &[ReportRow]) -> Result<()> {
    atomic_write(path.as_ref(), render_report(rows).as_bytes())
}

/// Splits one CSV record, honouring double-quoted fields.
fn split_csv(line: &str) -> Option<Vec<String>> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut chars = line.chars().peekable();
    let mut quoted = false;
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', true) => quoted = false,
            ('"', false) if cur.is_empty() => quoted = true,
            (',', false) => fields.push(std::mem::take(&mut cur)),
            (c, _) => cur.push(c),
        }
    }
    if quoted {
        return None;
    }
    fields.push(cur);
    Some(fields)
}

pub fn parse_report(path: &Path, text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    match lines.next() {
        Some((_, h)) if h == REPORT_HEADER => {}
        _ => return Err(parse_err(1, format!("expected header {REPORT_HEADER:?}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let f = split_csv(line)
            .filter(|f| f.len() == 4)
            .ok_or_else(|| parse_err(lineno, format!("expected 4 fields: {line:?}")))?;
        let real = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| parse_err(lineno, format!("invalid number {s:?}")))
        };
        let value = if f[1] == UNDEFINED { None } else { Some(real(&f[1])?) };
        let stddev = if f[2].is_empty() { None } else { Some(real(&f[2])?) };
        rows.push(ReportRow {
            metric: f[0].clone(),
            value,
            stddev,
            benchmark_id: (!f[3].is_empty()).then(|| f[3].clone()),
        });
    }
    Ok(rows)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    parse_report(path, &read_text(path)?)
}

/// File names inside a persisted state directory.
pub mod state_files {
    pub const EMBEDDINGS: &str = "embeddings.mat";
    pub const IDS: &str = "ids.txt";
    pub const PROMPTS: &str = "prompts.mat";
    pub const PERF: &str = "perf.prf";
    pub const PINV: &str = "pinv.mat";
    pub const NORMAL_INVERSE: &str = "normal_inverse.mat";
    pub const PROVENANCE: &str = "provenance.cfg";
}

fn write_state_files(dir: &Path, state: &FitState) -> Result<()> {
    use state_files::*;
    let emb = state.embeddings();
    write_matrix(dir.join(EMBEDDINGS), emb.vectors(), Dtype::F64)?;
    write_model_ids(dir.join(IDS), emb.model_ids())?;
    write_matrix(dir.join(PROMPTS), state.prompts().embeddings(), Dtype::F64)?;
    write_perf(dir.join(PERF), state.performance())?;
    write_matrix(dir.join(PINV), state.pinv().pinv_t(), Dtype::F64)?;
    write_matrix(dir.join(NORMAL_INVERSE), state.pinv().normal_inverse(), Dtype::F64)?;
    write_provenance(
        dir.join(PROVENANCE),
        emb.provenance().expect("fitted state has provenance"),
    )
}

/// Persists everything needed for incremental updates. An existing
/// directory is replaced as a whole: the new files are written to a sibling
/// temporary directory which is then renamed into place.
pub fn save_state(dir: impl AsRef<Path>, state: &FitState) -> Result<()> {
    let dir = dir.as_ref();
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(io_err(&parent))?;
    let staging = tempfile::Builder::new()
        .prefix(".state-")
        .tempdir_in(&parent)
        .map_err(io_err(&parent))?;
    write_state_files(staging.path(), state)?;
    let staged = staging.keep();
    if dir.exists() {
        let backup = parent.join(format!(
            ".{}.old-{}",
            dir.file_name().map(|n| n.to_string_lossy()).unwrap_or_default(),
            std::process::id()
        ));
        fs::rename(dir, &backup).map_err(io_err(dir))?;
        fs::rename(&staged, dir).map_err(io_err(dir))?;
        fs::remove_dir_all(&backup).map_err(io_err(&backup))?;
    } else {
        fs::rename(&staged, dir).map_err(io_err(dir))?;
    }
    Ok(())
}

/// Loads a state directory. Prompt ids are row indices; embeddings are
/// recomputed from the stored pseudoinverse and must match the stored ones
/// exactly.
pub fn load_state(dir: impl AsRef<Path>) -> Result<FitState> {
    use state_files::*;
    let dir = dir.as_ref();
    let provenance = read_provenance(dir.join(PROVENANCE))?;
    let model_ids = read_model_ids(dir.join(IDS))?;
    let prompts = PromptMatrix::with_index_ids(read_matrix(dir.join(PROMPTS))?)?;
    let perf = read_perf(dir.join(PERF))?.into_matrix(model_ids, prompts.prompt_ids().to_vec())?;
    let pinv = PseudoinverseState::from_parts(
        provenance.config,
        read_matrix(dir.join(PINV))?,
        read_matrix(dir.join(NORMAL_INVERSE))?,
        provenance.route,
    )?;
    let state = FitState::from_parts(pinv, prompts, perf)?;
    let stored = read_matrix(dir.join(EMBEDDINGS))?;
    if &stored != state.embeddings().vectors() {
        return Err(format_err(
            &dir.join(EMBEDDINGS),
            "stored embeddings disagree with performance x pseudoinverse",
        ));
    }
    Ok(state)
}

/// Loads embeddings plus ids; the provenance sidecar is attached when present.
pub fn load_embeddings(
    embeddings: impl AsRef<Path>,
    ids: impl AsRef<Path>,
) -> Result<ModelEmbeddings> {
    let embeddings = embeddings.as_ref();
    let vectors = read_matrix(embeddings)?;
    let model_ids = read_model_ids(ids)?;
    let sidecar = provenance_sidecar(embeddings);
    let provenance = if sidecar.exists() {
        Some(read_provenance(&sidecar)?)
    } else {
        None
    };
    ModelEmbeddings::new(vectors, model_ids, provenance)
}

/// `<embeddings file>.provenance`.
pub fn provenance_sidecar(embeddings: &Path) -> PathBuf {
    let mut s = embeddings.as_os_str().to_os_string();
    s.push(".provenance");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("test")
    }

    #[test]
    fn one_by_one_f64_size() {
        let bytes = encode_matrix(&Matrix::new(1, 1, vec![0.5]).unwrap(), Dtype::F64).unwrap();
        assert_eq!(bytes.len(), 28 + 8);
        assert_eq!(&bytes[..8], b"LLEMBMAT");
        assert_eq!(bytes[8], 1);
        assert_eq!(bytes[9], 2);
        assert_eq!(&bytes[10..12], &[0, 0]);
        assert_eq!(&bytes[12..20], &1u64.to_le_bytes());
        assert_eq!(&bytes[28..], &0.5f64.to_le_bytes());
    }

    #[test]
    fn f32_rounds_to_nearest_single() {
        let m = Matrix::new(1, 1, vec![0.1]).unwrap();
        let back = decode_matrix(p(), &encode_matrix(&m, Dtype::F32).unwrap()).unwrap();
        assert_eq!(back.get(0, 0), f64::from(0.1f32));
        assert_ne!(back.get(0, 0), 0.1);
    }

    #[test]
    fn f32_rejects_out_of_range() {
        let m = Matrix::new(1, 1, vec![1e300]).unwrap();
        assert!(encode_matrix(&m, Dtype::F32).is_err());
    }

    #[test]
    fn matrix_header_errors() {
        let good = encode_matrix(&Matrix::identity(2), Dtype::F64).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode_matrix(p(), &bad).unwrap_err().to_string().contains("magic"));
        let mut bad = good.clone();
        bad[8] = 2;
        assert!(decode_matrix(p(), &bad).unwrap_err().to_string().contains("version"));
        let mut bad = good.clone();
        bad[9] = 3;
        assert!(decode_matrix(p(), &bad).unwrap_err().to_string().contains("dtype"));
        let mut bad = good.clone();
        bad[10] = 1;
        assert!(decode_matrix(p(), &bad).unwrap_err().to_string().contains("reserved"));
        assert!(decode_matrix(p(), &good[..good.len() - 1]).is_err());
        let mut long = good.clone();
        long.push(0);
        assert!(decode_matrix(p(), &long).is_err());
        assert!(decode_matrix(p(), &good[..10]).unwrap_err().to_string().contains("truncated"));
        let mut huge = good.clone();
        huge[12..20].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_matrix(p(), &huge).is_err());
        // a perf file is not a matrix file
        let perf = encode_perf(1, 1, &[1]).unwrap();
        assert!(decode_matrix(p(), &perf).is_err());
    }

    #[test]
    fn perf_round_trip_and_corruption() {
        let bytes = encode_perf(2, 3, &[1, -1, 1, -1, -1, 1]).unwrap();
        let back = decode_perf(p(), &bytes).unwrap();
        assert_eq!(back.outcomes, vec![1, -1, 1, -1, -1, 1]);
        assert_eq!((back.rows, back.cols), (2, 3));

        let mut bad = bytes.clone();
        bad[28 + 4] = 0;
        let msg = decode_perf(p(), &bad).unwrap_err().to_string();
        assert!(msg.contains("offset 32"), "{msg}");
        assert!(msg.contains("row 1, column 1"), "{msg}");
        assert!(encode_perf(1, 1, &[0]).is_err());
    }

    #[test]
    fn manifest_parsing() {
        let m = parse_manifest(p(), "prompt_index\tbenchmark_id\n0\tgsm8k\n").unwrap();
        assert_eq!(m.benchmark_ids(), &["gsm8k"]);
        let err = parse_manifest(p(), "prompt_index\tbenchmark_id\n0\ta\n0\tb\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_manifest(p(), "prompt_index\tbenchmark_id\n0 a\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(parse_manifest(p(), "idx\tbench\n0\ta\n").is_err());
        assert!(parse_manifest(p(), "prompt_index\tbenchmark_id\n1\ta\n").is_err());
    }

    #[test]
    fn config_parsing() {
        let cfg = parse_config(p(), "# only comments\n\n# more\n").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.lambda, 1.0);
        assert_eq!(cfg.knn_k, 5);
        assert_eq!(cfg.ns_max_iters, 50);
        assert_eq!(cfg.ns_tol, 1e-10);
        assert_eq!(cfg.epsilon, 0.0);

        let cfg = parse_config(p(), "lambda = 0.5\nepsilon=0.01\nseed=3\n").unwrap();
        assert_eq!((cfg.lambda, cfg.epsilon, cfg.seed), (0.5, 0.01, 3));
        let err = parse_config(p(), "lambda=1\nalpha=2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(parse_config(p(), "lambda\n").is_err());
        assert!(parse_config(p(), "lambda=-1\n").is_err());
        assert!(parse_config(p(), "knn_k=x\n").is_err());
        assert_eq!(parse_config(p(), &RunConfig::default().render()).unwrap(), RunConfig::default());
    }

    #[test]
    fn model_id_rules() {
        assert_eq!(parse_model_ids(p(), "a\n").unwrap(), vec!["a"]);
        assert!(matches!(
            parse_model_ids(p(), "a\n\nb\n").unwrap_err(),
            Error::Parse { line: 2, .. }
        ));
        assert!(parse_model_ids(p(), "a\na\n").is_err());
        assert!(parse_model_ids(p(), "model \n").is_err());
        assert!(write_model_ids("/nonexistent/x", &["bad ".to_string()]).is_err());
    }

    #[test]
    fn report_round_trip() {
        let rows = vec![
            ReportRow {
                metric: "auc".into(),
                value: Some(0.1 + 0.2),
                stddev: Some(1.0 / 3.0),
                benchmark_id: None,
            },
            ReportRow {
                metric: "benchmark_score_correlation".into(),
                value: None,
                stddev: None,
                benchmark_id: Some("a,b".into()),
            },
        ];
        let text = render_report(&rows);
        assert!(text.starts_with("metric,value,stddev,benchmark_id\n"));
        assert!(text.contains("3.0000000000000004e-1"));
        assert_eq!(parse_report(p(), &text).unwrap(), rows);
    }

    #[test]
    fn provenance_round_trip() {
        let prov = Provenance {
            config: RegularizationConfig::new(1e-3, 1e-6).unwrap(),
            n_prompts: 10,
            dim: 4,
            n_models: 3,
            route: FitRoute::NewtonSchulz,
        };
        let text = render_provenance(&prov);
        assert_eq!(parse_provenance(p(), &text).unwrap(), prov);
        assert!(parse_provenance(p(), "route=svd\n").is_err());
    }
}
