//! Line-oriented text formats: trajectory files, policy tables and occupancy dumps.
//!
//! A trajectory file is a sequence of blocks. Each block starts with
//!
//! ```text
//! option-traj v1 n_states=<int> n_actions=<int> k=<int> T=<int> annotated=<0|1>
//! ```
//!
//! followed by `T + 1` lines of `s a` (or `s a o` when annotated). The initial
//! option is implicit. Unannotated files may declare `k=0`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use optgail_core::math::is_distribution;
use optgail_core::model::ROW_TOL;
use optgail_core::{HierPolicy, OptionOccupancy, OptionTrajectory, Trajectory};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl FormatError {
    pub fn line(&self) -> Option<usize> {
        match self {
            FormatError::Parse { line, .. } => Some(*line),
            FormatError::Io { .. } => None,
        }
    }

    pub fn is_not_found(&self) -> bool {
        matches!(self, FormatError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}

/// Demos read from a trajectory file; `k` is what the headers declared.
#[derive(Debug, Clone, PartialEq)]
pub enum TrajectorySet {
    Plain {
        n_states: usize,
        n_actions: usize,
        demos: Vec<Trajectory>,
    },
    Annotated {
        n_states: usize,
        n_actions: usize,
        k: usize,
        demos: Vec<OptionTrajectory>,
    },
}

impl TrajectorySet {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            TrajectorySet::Plain {
                n_states,
                n_actions,
                ..
            }
            | TrajectorySet::Annotated {
                n_states,
                n_actions,
                ..
            } => (*n_states, *n_actions),
        }
    }

    /// State-action pairs, dropping labels if present.
    pub fn plain(&self) -> Vec<Trajectory> {
        match self {
            TrajectorySet::Plain { demos, .. } => demos.clone(),
            TrajectorySet::Annotated { demos, .. } => {
                demos.iter().map(|d| d.trajectory()).collect()
            }
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), FormatError> {
    fs::write(path, text).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_file(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn format_plain(demos: &[Trajectory], n_states: usize, n_actions: usize) -> String {
    let mut out = String::new();
    for d in demos {
        writeln!(
            out,
            "option-traj v1 n_states={n_states} n_actions={n_actions} k=0 T={} annotated=0",
            d.len() - 1
        )
        .unwrap();
        for (s, a) in d.states.iter().zip(&d.actions) {
            writeln!(out, "{s} {a}").unwrap();
        }
    }
    out
}

pub fn format_annotated(demos: &[OptionTrajectory], n_states: usize, n_actions: usize) -> String {
    let mut out = String::new();
    for d in demos {
        writeln!(
            out,
            "option-traj v1 n_states={n_states} n_actions={n_actions} k={} T={} annotated=1",
            d.k(),
            d.len() - 1
        )
        .unwrap();
        for t in 0..d.len() {
            writeln!(out, "{} {} {}", d.states[t], d.actions[t], d.option_at(t)).unwrap();
        }
    }
    out
}

pub fn save_demos(
    path: &Path,
    demos: &[Trajectory],
    n_states: usize,
    n_actions: usize,
) -> Result<(), FormatError> {
    write_file(path, &format_plain(demos, n_states, n_actions))
}

pub fn save_annotated(
    path: &Path,
    demos: &[OptionTrajectory],
    n_states: usize,
    n_actions: usize,
) -> Result<(), FormatError> {
    write_file(path, &format_annotated(demos, n_states, n_actions))
}

pub fn load_demos(path: &Path) -> Result<TrajectorySet, FormatError> {
    parse_trajectories(&read_file(path)?, &path.display().to_string())
}

struct Header {
    n_states: usize,
    n_actions: usize,
    k: usize,
    last: usize,
    annotated: bool,
}

/// Parses `key=value` fields after a fixed magic prefix, in the given order.
fn parse_fields<'a>(line: &'a str, magic: &[&str], keys: &[&str]) -> Result<Vec<&'a str>, String> {
    let mut words = line.split_whitespace();
    for m in magic {
        if words.next() != Some(m) {
            return Err(format!(
                "expected header starting with `{}`",
                magic.join(" ")
            ));
        }
    }
    let mut values = Vec::with_capacity(keys.len());
    for key in keys {
        let word = words
            .next()
            .ok_or_else(|| format!("header is missing `{key}=`"))?;
        let value = word
            .strip_prefix(key)
            .and_then(|w| w.strip_prefix('='))
            .ok_or_else(|| format!("expected `{key}=`, found `{word}`"))?;
        values.push(value);
    }
    if let Some(extra) = words.next() {
        return Err(format!("unexpected header field `{extra}`"));
    }
    Ok(values)
}

fn parse_count(value: &str, what: &str) -> Result<usize, String> {
    value
        .parse()
        .map_err(|_| format!("`{what}` must be a nonnegative integer, found `{value}`"))
}

fn parse_header(line: &str) -> Result<Header, String> {
    let v = parse_fields(
        line,
        &["option-traj", "v1"],
        &["n_states", "n_actions", "k", "T", "annotated"],
    )?;
    let header = Header {
        n_states: parse_count(v[0], "n_states")?,
        n_actions: parse_count(v[1], "n_actions")?,
        k: parse_count(v[2], "k")?,
        last: parse_count(v[3], "T")?,
        annotated: match v[4] {
            "0" => false,
            "1" => true,
            other => return Err(format!("`annotated` must be 0 or 1, found `{other}`")),
        },
    };
    if header.n_states == 0 || header.n_actions == 0 {
        return Err("n_states and n_actions must be positive".into());
    }
    if header.annotated && header.k == 0 {
        return Err("annotated trajectories need k >= 1".into());
    }
    Ok(header)
}

pub fn parse_trajectories(text: &str, origin: &str) -> Result<TrajectorySet, FormatError> {
    let err = |line: usize, message: String| FormatError::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let mut plain = Vec::new();
    let mut labeled = Vec::new();
    let mut first: Option<Header> = None;
    while let Some((no, line)) = lines.next() {
        let h = parse_header(line).map_err(|m| err(no, m))?;
        if let Some(f) = &first {
            if (f.n_states, f.n_actions, f.k, f.annotated)
                != (h.n_states, h.n_actions, h.k, h.annotated)
            {
                return Err(err(
                    no,
                    "header disagrees with the first block of the file".into(),
                ));
            }
        }
        let width = if h.annotated { 3 } else { 2 };
        let (mut states, mut actions, mut options) = (Vec::new(), Vec::new(), vec![h.k]);
        for t in 0..=h.last {
            let (no, line) = lines.next().ok_or_else(|| {
                err(
                    text.lines().count() + 1,
                    format!("truncated block: expected {} steps, found {t}", h.last + 1),
                )
            })?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != width {
                return Err(err(
                    no,
                    format!("expected {width} integers, found `{}`", line.trim()),
                ));
            }
            let parse = |i: usize, bound: usize, what: &str| -> Result<usize, FormatError> {
                let v: usize = fields[i]
                    .parse()
                    .map_err(|_| err(no, format!("`{}` is not a valid {what}", fields[i])))?;
                if v >= bound {
                    return Err(err(
                        no,
                        format!("{what} {v} is out of range (declared {bound})"),
                    ));
                }
                Ok(v)
            };
            states.push(parse(0, h.n_states, "state")?);
            actions.push(parse(1, h.n_actions, "action")?);
            if h.annotated {
                options.push(parse(2, h.k, "option")?);
            }
        }
        if h.annotated {
            labeled.push(
                OptionTrajectory::new(states, actions, options, h.k)
                    .map_err(|e| err(no, e.to_string()))?,
            );
        } else {
            plain.push(Trajectory::new(states, actions).map_err(|e| err(no, e.to_string()))?);
        }
        first.get_or_insert(h);
    }
    let h = first.ok_or_else(|| err(1, "file contains no trajectories".into()))?;
    Ok(if h.annotated {
        TrajectorySet::Annotated {
            n_states: h.n_states,
            n_actions: h.n_actions,
            k: h.k,
            demos: labeled,
        }
    } else {
        TrajectorySet::Plain {
            n_states: h.n_states,
            n_actions: h.n_actions,
            demos: plain,
        }
    })
}

fn prev_label(prev: usize, k: usize) -> String {
    if prev == k {
        "#".into()
    } else {
        prev.to_string()
    }
}

/// `hier-policy v1` dump: one `high s prev p...` line per `(s, prev)` and one
/// `low s o p...` line per `(s, o)`. Probabilities use the shortest exact
/// decimal form, so a save/load round trip is lossless.
pub fn format_policy(p: &HierPolicy) -> String {
    let (n_s, n_a, k) = (p.n_states(), p.n_actions(), p.k());
    let mut out = format!("hier-policy v1 n_states={n_s} n_actions={n_a} k={k}\n");
    let row = |out: &mut String, vals: &[f64]| {
        for v in vals {
            write!(out, " {v:?}").unwrap();
        }
        out.push('\n');
    };
    for s in 0..n_s {
        for prev in 0..=k {
            write!(out, "high {s} {}", prev_label(prev, k)).unwrap();
            row(&mut out, p.high_row(s, prev));
        }
    }
    for s in 0..n_s {
        for o in 0..k {
            write!(out, "low {s} {o}").unwrap();
            row(&mut out, p.low_row(s, o));
        }
    }
    out
}

pub fn save_policy(path: &Path, p: &HierPolicy) -> Result<(), FormatError> {
    write_file(path, &format_policy(p))
}

pub fn load_policy(path: &Path) -> Result<HierPolicy, FormatError> {
    parse_policy(&read_file(path)?, &path.display().to_string())
}

pub fn parse_policy(text: &str, origin: &str) -> Result<HierPolicy, FormatError> {
    let err = |line: usize, message: String| FormatError::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (no, header) = lines
        .next()
        .ok_or_else(|| err(1, "empty policy file".into()))?;
    let v = parse_fields(
        header,
        &["hier-policy", "v1"],
        &["n_states", "n_actions", "k"],
    )
    .map_err(|m| err(no, m))?;
    let n_s = parse_count(v[0], "n_states").map_err(|m| err(no, m))?;
    let n_a = parse_count(v[1], "n_actions").map_err(|m| err(no, m))?;
    let k = parse_count(v[2], "k").map_err(|m| err(no, m))?;
    let mut high = Vec::with_capacity(n_s * (k + 1) * k);
    let mut low = Vec::with_capacity(n_s * k * n_a);
    let expected = |kind: &str, i: usize| -> (usize, String) {
        if kind == "high" {
            (i / (k + 1), prev_label(i % (k + 1), k))
        } else {
            (i / k, (i % k).to_string())
        }
    };
    for (kind, rows, width, table) in [
        ("high", n_s * (k + 1), k, &mut high),
        ("low", n_s * k, n_a, &mut low),
    ] {
        for i in 0..rows {
            let (no, line) = lines.next().ok_or_else(|| {
                err(
                    text.lines().count() + 1,
                    format!("truncated: missing {kind} rows"),
                )
            })?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let (s, tag) = expected(kind, i);
            if fields.len() != 3 + width
                || fields[0] != kind
                || fields[1] != s.to_string()
                || fields[2] != tag
            {
                return Err(err(
                    no,
                    format!("expected `{kind} {s} {tag}` followed by {width} probabilities"),
                ));
            }
            let row = fields[3..]
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| err(no, format!("`{f}` is not a number")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if !is_distribution(&row, ROW_TOL) {
                return Err(err(
                    no,
                    format!("{kind} row is not a probability distribution"),
                ));
            }
            table.extend(row);
        }
    }
    if let Some((no, _)) = lines.next() {
        return Err(err(no, "unexpected trailing content".into()));
    }
    HierPolicy::new(n_s, n_a, k, high, low).map_err(|e| err(no, e.to_string()))
}

/// `occ v1` dump: one `s a o prev value` line per nonzero cell.
pub fn format_occupancy(occ: &OptionOccupancy) -> String {
    let (n_s, n_a, k) = (occ.n_states(), occ.n_actions(), occ.k());
    let mut out = format!(
        "occ v1 n_states={n_s} n_actions={n_a} k={k} gamma={:?}\n",
        occ.gamma()
    );
    for s in 0..n_s {
        for a in 0..n_a {
            for o in 0..k {
                for prev in 0..=k {
                    let v = occ.get(s, a, o, prev);
                    if v != 0.0 {
                        writeln!(out, "{s} {a} {o} {} {v:?}", prev_label(prev, k)).unwrap();
                    }
                }
            }
        }
    }
    out
}

pub fn save_occupancy(path: &Path, occ: &OptionOccupancy) -> Result<(), FormatError> {
    write_file(path, &format_occupancy(occ))
}
