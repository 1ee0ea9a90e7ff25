//! Sparse observation containers and the text formats used to load them.
//!
//! Three on-disk layouts are supported:
//!
//! * dense static matrices: `m` lines of `n` whitespace-separated decimals,
//!   with a marker value (default `-1`) for unobserved cells;
//! * sparse triples `i j value`, one per line;
//! * sparse quadruples `i j k value`, one per line.
//!
//! Sparse files are zero-based, ignore blank lines and `#` comments, and may
//! declare their shape with a `# shape: m n [t]` comment. The writers always
//! emit that comment so a write/parse cycle preserves dimensions.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub user: usize,
    pub service: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub user: usize,
    pub service: usize,
    pub time: usize,
    pub value: f64,
}

/// Observed user × service QoS values.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    users: usize,
    services: usize,
    entries: Vec<MatrixEntry>,
    by_user: Vec<Vec<usize>>,
    by_service: Vec<Vec<usize>>,
}

impl ObservationMatrix {
    pub fn new(users: usize, services: usize, entries: Vec<MatrixEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        let mut by_user = vec![Vec::new(); users];
        let mut by_service = vec![Vec::new(); services];
        for (idx, e) in entries.iter().enumerate() {
            if e.user >= users || e.service >= services {
                return Err(Error::contract(format!(
                    "entry ({}, {}) outside {users}x{services}",
                    e.user, e.service
                )));
            }
            if !e.value.is_finite() {
                return Err(Error::Domain(format!(
                    "entry ({}, {}) has non-finite value",
                    e.user, e.service
                )));
            }
            if !seen.insert((e.user, e.service)) {
                return Err(Error::contract(format!(
                    "duplicate entry ({}, {})",
                    e.user, e.service
                )));
            }
            by_user[e.user].push(idx);
            by_service[e.service].push(idx);
        }
        Ok(Self {
            users,
            services,
            entries,
            by_user,
            by_service,
        })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn services(&self) -> usize {
        self.services
    }

    pub fn entries(&self) -> &[MatrixEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry indices observed by `user`, in insertion order.
    pub fn user_entries(&self, user: usize) -> &[usize] {
        &self.by_user[user]
    }

    /// Entry indices observed for `service`, in insertion order.
    pub fn service_entries(&self, service: usize) -> &[usize] {
        &self.by_service[service]
    }

    pub fn transpose(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|e| MatrixEntry {
                user: e.service,
                service: e.user,
                value: e.value,
            })
            .collect();
        Self::new(self.services, self.users, entries).expect("transpose of a valid matrix")
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.value).collect()
    }
}

/// Observed user × service × time QoS values.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTensor {
    users: usize,
    services: usize,
    times: usize,
    entries: Vec<TensorEntry>,
}

impl ObservationTensor {
    pub fn new(
        users: usize,
        services: usize,
        times: usize,
        entries: Vec<TensorEntry>,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.user >= users || e.service >= services || e.time >= times {
                return Err(Error::contract(format!(
                    "entry ({}, {}, {}) outside {users}x{services}x{times}",
                    e.user, e.service, e.time
                )));
            }
            if !e.value.is_finite() {
                return Err(Error::Domain(format!(
                    "entry ({}, {}, {}) has non-finite value",
                    e.user, e.service, e.time
                )));
            }
            if !seen.insert((e.user, e.service, e.time)) {
                return Err(Error::contract(format!(
                    "duplicate entry ({}, {}, {})",
                    e.user, e.service, e.time
                )));
            }
        }
        Ok(Self {
            users,
            services,
            times,
            entries,
        })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn services(&self) -> usize {
        self.services
    }

    pub fn times(&self) -> usize {
        self.times
    }

    pub fn entries(&self) -> &[TensorEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.value).collect()
    }
}

/// Entry-list containers that can be partitioned into train/test subsets.
pub trait Observations: Sized {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// New container with the same dimensions holding the entries at `indices`.
    fn subset(&self, indices: &[usize]) -> Self;

    /// Service index of every entry, used to group test values for outlier scoring.
    fn service_labels(&self) -> Vec<usize>;

    fn values(&self) -> Vec<f64>;
}

impl Observations for ObservationMatrix {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn subset(&self, indices: &[usize]) -> Self {
        let entries = indices.iter().map(|&i| self.entries[i]).collect();
        Self::new(self.users, self.services, entries).expect("subset of a valid matrix")
    }

    fn service_labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.service).collect()
    }

    fn values(&self) -> Vec<f64> {
        ObservationMatrix::values(self)
    }
}

impl Observations for ObservationTensor {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn subset(&self, indices: &[usize]) -> Self {
        let entries = indices.iter().map(|&i| self.entries[i]).collect();
        Self::new(self.users, self.services, self.times, entries).expect("subset of a valid tensor")
    }

    fn service_labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.service).collect()
    }

    fn values(&self) -> Vec<f64> {
        ObservationTensor::values(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ResponseTime,
    Throughput,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::ResponseTime => "response_time",
            Metric::Throughput => "throughput",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "response_time" | "rt" => Ok(Metric::ResponseTime),
            "throughput" | "tp" => Ok(Metric::Throughput),
            other => Err(Error::config(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub kind: DatasetKind,
    pub metric: Metric,
    pub users: usize,
    pub services: usize,
    pub times: usize,
    pub value_range: (f64, f64),
    pub missing_marker: f64,
}

impl DatasetMeta {
    /// Shape and range of the public WS-DREAM static matrices (339 users, 5825 services).
    pub fn ws_dream_static(metric: Metric) -> Self {
        let max = match metric {
            Metric::ResponseTime => 20.0,
            Metric::Throughput => 1000.0,
        };
        Self {
            kind: DatasetKind::Static,
            metric,
            users: 339,
            services: 5825,
            times: 1,
            value_range: (0.0, max),
            missing_marker: -1.0,
        }
    }

    /// Shape and range of the WS-DREAM dynamic tensors (142 users, 4500 services, 64 slices).
    pub fn ws_dream_dynamic(metric: Metric) -> Self {
        let max = match metric {
            Metric::ResponseTime => 20.0,
            Metric::Throughput => 6727.0,
        };
        Self {
            kind: DatasetKind::Dynamic,
            metric,
            users: 142,
            services: 4500,
            times: 64,
            value_range: (0.0, max),
            missing_marker: -1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.services == 0 || self.times == 0 {
            return Err(Error::config("dataset dimensions must be positive"));
        }
        if !(self.value_range.0 <= self.value_range.1) {
            return Err(Error::config("value range minimum exceeds maximum"));
        }
        Ok(())
    }
}

fn parse_token<T: FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::parse(line, format!("invalid {what} `{tok}`")))
}

fn parse_value(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = parse_token(tok, line, "value")?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite value `{tok}`")));
    }
    Ok(v)
}

fn read_line(reader: &mut impl BufRead, buf: &mut String, line: usize) -> Result<usize> {
    buf.clear();
    reader
        .read_line(buf)
        .map_err(|e| Error::parse(line, format!("read failed: {e}")))
}

/// Reads a dense `users × services` matrix, skipping cells equal to the missing marker.
pub fn parse_static_dense(mut reader: impl BufRead, meta: &DatasetMeta) -> Result<ObservationMatrix> {
    meta.validate()?;
    let mut entries = Vec::new();
    let mut buf = String::new();
    let mut row = 0;
    let mut line_no = 0;
    loop {
        line_no += 1;
        if read_line(&mut reader, &mut buf, line_no)? == 0 {
            break;
        }
        let trimmed = buf.trim();
        if trimmed.is_empty() {
            continue;
        }
        if row >= meta.users {
            return Err(Error::parse(
                line_no,
                format!("expected {} rows, found more", meta.users),
            ));
        }
        let mut count = 0;
        for tok in trimmed.split_whitespace() {
            if count >= meta.services {
                return Err(Error::parse(
                    line_no,
                    format!("expected {} values, found more", meta.services),
                ));
            }
            let v = parse_value(tok, line_no)?;
            if v != meta.missing_marker {
                entries.push(MatrixEntry {
                    user: row,
                    service: count,
                    value: v,
                });
            }
            count += 1;
        }
        if count != meta.services {
            return Err(Error::parse(
                line_no,
                format!("expected {} values, found {count}", meta.services),
            ));
        }
        row += 1;
    }
    if row != meta.users {
        return Err(Error::parse(
            line_no,
            format!("expected {} rows, found {row}", meta.users),
        ));
    }
    ObservationMatrix::new(meta.users, meta.services, entries)
}

/// Infers `(rows, columns)` of a dense matrix file from its first non-empty line and line count.
pub fn infer_dense_shape(mut reader: impl BufRead) -> Result<(usize, usize)> {
    let mut buf = String::new();
    let mut rows = 0;
    let mut cols = None;
    let mut line_no = 0;
    loop {
        line_no += 1;
        if read_line(&mut reader, &mut buf, line_no)? == 0 {
            break;
        }
        let trimmed = buf.trim();
        if trimmed.is_empty() {
            continue;
        }
        rows += 1;
        if cols.is_none() {
            cols = Some(trimmed.split_whitespace().count());
        }
    }
    Ok((rows, cols.unwrap_or(0)))
}

/// Shared line reader for the sparse formats: returns declared shape and
/// `(line number, index tokens, value)` records.
fn read_sparse(
    mut reader: impl BufRead,
    arity: usize,
) -> Result<(Option<Vec<usize>>, Vec<(usize, Vec<usize>, f64)>)> {
    let mut declared = None;
    let mut records = Vec::new();
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        line_no += 1;
        if read_line(&mut reader, &mut buf, line_no)? == 0 {
            break;
        }
        let trimmed = buf.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(shape) = comment.trim().strip_prefix("shape:") {
                let dims = shape
                    .split_whitespace()
                    .map(|t| parse_token::<usize>(t, line_no, "dimension"))
                    .collect::<Result<Vec<_>>>()?;
                if dims.len() != arity {
                    return Err(Error::parse(
                        line_no,
                        format!("shape declares {} dimensions, expected {arity}", dims.len()),
                    ));
                }
                declared = Some(dims);
            }
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() != arity + 1 {
            return Err(Error::parse(
                line_no,
                format!("expected {} fields, found {}", arity + 1, toks.len()),
            ));
        }
        let idx = toks[..arity]
            .iter()
            .map(|t| parse_token::<usize>(t, line_no, "index"))
            .collect::<Result<Vec<_>>>()?;
        let value = parse_value(toks[arity], line_no)?;
        records.push((line_no, idx, value));
    }
    Ok((declared, records))
}

fn resolve_shape(
    declared: Option<Vec<usize>>,
    records: &[(usize, Vec<usize>, f64)],
    arity: usize,
) -> Result<Vec<usize>> {
    let mut inferred = vec![0usize; arity];
    for (_, idx, _) in records {
        for (d, &i) in inferred.iter_mut().zip(idx) {
            *d = (*d).max(i + 1);
        }
    }
    match declared {
        None => Ok(inferred),
        Some(dims) => {
            for (line, idx, _) in records {
                if idx.iter().zip(&dims).any(|(&i, &d)| i >= d) {
                    return Err(Error::parse(
                        *line,
                        format!("index {idx:?} outside declared shape {dims:?}"),
                    ));
                }
            }
            Ok(dims)
        }
    }
}

/// Reads `i j value` records; the shape is declared or inferred as max index + 1.
pub fn parse_sparse_triples(reader: impl BufRead) -> Result<ObservationMatrix> {
    let (declared, records) = read_sparse(reader, 2)?;
    let dims = resolve_shape(declared, &records, 2)?;
    let mut seen = HashSet::with_capacity(records.len());
    let mut entries = Vec::with_capacity(records.len());
    for (line, idx, value) in records {
        if !seen.insert((idx[0], idx[1])) {
            return Err(Error::parse(
                line,
                format!("duplicate entry ({}, {})", idx[0], idx[1]),
            ));
        }
        entries.push(MatrixEntry {
            user: idx[0],
            service: idx[1],
            value,
        });
    }
    ObservationMatrix::new(dims[0], dims[1], entries)
}

/// Reads `i j k value` records; the shape is declared or inferred as max index + 1.
pub fn parse_dynamic_quads(reader: impl BufRead) -> Result<ObservationTensor> {
    let (declared, records) = read_sparse(reader, 3)?;
    let dims = resolve_shape(declared, &records, 3)?;
    let mut seen = HashSet::with_capacity(records.len());
    let mut entries = Vec::with_capacity(records.len());
    for (line, idx, value) in records {
        if !seen.insert((idx[0], idx[1], idx[2])) {
            return Err(Error::parse(
                line,
                format!("duplicate entry ({}, {}, {})", idx[0], idx[1], idx[2]),
            ));
        }
        entries.push(TensorEntry {
            user: idx[0],
            service: idx[1],
            time: idx[2],
            value,
        });
    }
    ObservationTensor::new(dims[0], dims[1], dims[2], entries)
}

pub fn write_sparse_triples(matrix: &ObservationMatrix, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "# shape: {} {}", matrix.users(), matrix.services())?;
    for e in matrix.entries() {
        writeln!(out, "{} {} {}", e.user, e.service, e.value)?;
    }
    Ok(())
}

pub fn write_dynamic_quads(tensor: &ObservationTensor, mut out: impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "# shape: {} {} {}",
        tensor.users(),
        tensor.services(),
        tensor.times()
    )?;
    for e in tensor.entries() {
        writeln!(out, "{} {} {} {}", e.user, e.service, e.time, e.value)?;
    }
    Ok(())
}

/// Writes a dense matrix with `marker` in unobserved cells.
pub fn write_static_dense(
    matrix: &ObservationMatrix,
    marker: f64,
    mut out: impl Write,
) -> std::io::Result<()> {
    let mut grid = vec![marker; matrix.users() * matrix.services()];
    for e in matrix.entries() {
        grid[e.user * matrix.services() + e.service] = e.value;
    }
    for row in grid.chunks(matrix.services().max(1)) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}
