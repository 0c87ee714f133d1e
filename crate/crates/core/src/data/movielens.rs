//! Conversion of the MovieLens-1M `::`-delimited release into the CSV +
//! schema layout the rest of the pipeline reads.
//!
//! Seven categorical fields: gender, age, occupation, zipcode, release year
//! (parsed from the title), watch year (from the rating timestamp) and the
//! first listed genre. Ratings of 3 are dropped; see [`binarize_movielens`].

use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::schema::{ColumnSpec, FieldKind, SchemaFile};
use super::transform::binarize_movielens;
use crate::error::{Error, Result};

pub const FIELDS: [&str; 7] = [
    "Gender",
    "Age",
    "Occupation",
    "Zipcode",
    "ReleaseTime",
    "WatchTime",
    "Genre",
];

pub const LABEL: &str = "label";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrepareStats {
    pub ratings: usize,
    pub kept: usize,
    pub dropped_neutral: usize,
}

pub fn schema() -> SchemaFile {
    SchemaFile {
        label: LABEL.into(),
        fields: FIELDS
            .iter()
            .map(|n| ColumnSpec {
                name: (*n).into(),
                kind: FieldKind::Categorical,
                min_count: Some(1),
            })
            .collect(),
    }
}

fn read_lossy(path: &Path) -> Result<String> {
    // movies.dat is Latin-1; only ASCII digits and delimiters are interpreted
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn split_line(line: &str, expected: usize, path: &Path, lineno: usize) -> Result<Vec<String>> {
    let parts: Vec<String> = line.split("::").map(str::to_string).collect();
    if parts.len() != expected {
        return Err(Error::Parse(format!(
            "{}:{lineno}: expected {expected} `::`-separated fields, got {}",
            path.display(),
            parts.len()
        )));
    }
    Ok(parts)
}

/// Calendar year of a Unix timestamp (UTC).
pub fn year_of_timestamp(ts: i64) -> i64 {
    // days-from-civil inverse, proleptic Gregorian
    let z = ts.div_euclid(86_400) + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let month = if mp < 10 { mp + 3 } else { mp - 9 };
    yoe + era * 400 + i64::from(month <= 2)
}

/// `"Toy Story (1995)"` → `"1995"`; titles without a trailing year give `"unknown"`.
pub fn release_year(title: &str) -> String {
    let t = title.trim();
    if t.len() >= 6 && t.ends_with(')') {
        let candidate = &t[t.len() - 5..t.len() - 1];
        if t.as_bytes()[t.len() - 6] == b'(' && candidate.bytes().all(|b| b.is_ascii_digit()) {
            return candidate.to_string();
        }
    }
    "unknown".into()
}

fn first_genre(genres: &str) -> String {
    genres.split('|').next().unwrap_or("").trim().to_string()
}

/// Reads `users.dat`, `movies.dat` and `ratings.dat` from `src_dir` and writes
/// `out_csv` plus its schema sidecar `out_schema`.
pub fn prepare(src_dir: &Path, out_csv: &Path, out_schema: &Path) -> Result<PrepareStats> {
    let users_path = src_dir.join("users.dat");
    let mut users: HashMap<String, [String; 4]> = HashMap::new();
    for (i, line) in read_lossy(&users_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p = split_line(line, 5, &users_path, i + 1)?;
        users.insert(
            p[0].clone(),
            [p[1].clone(), p[2].clone(), p[3].clone(), p[4].clone()],
        );
    }

    let movies_path = src_dir.join("movies.dat");
    let mut movies: HashMap<String, [String; 2]> = HashMap::new();
    for (i, line) in read_lossy(&movies_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p = split_line(line, 3, &movies_path, i + 1)?;
        movies.insert(p[0].clone(), [release_year(&p[1]), first_genre(&p[2])]);
    }

    let ratings_path = src_dir.join("ratings.dat");
    let file = std::fs::File::create(out_csv).map_err(|e| Error::io(out_csv, e))?;
    let mut out = BufWriter::new(file);
    let io_err = |e| Error::io(out_csv, e);
    writeln!(out, "{},{LABEL}", FIELDS.join(",")).map_err(io_err)?;

    let mut stats = PrepareStats {
        ratings: 0,
        kept: 0,
        dropped_neutral: 0,
    };
    for (i, line) in read_lossy(&ratings_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let p = split_line(line, 4, &ratings_path, lineno)?;
        stats.ratings += 1;
        let rating: i64 = p[2].trim().parse().map_err(|_| {
            Error::Parse(format!("{}:{lineno}: bad rating `{}`", ratings_path.display(), p[2]))
        })?;
        let Some(label) = binarize_movielens(rating)? else {
            stats.dropped_neutral += 1;
            continue;
        };
        let ts: i64 = p[3].trim().parse().map_err(|_| {
            Error::Parse(format!("{}:{lineno}: bad timestamp `{}`", ratings_path.display(), p[3]))
        })?;
        let user = users.get(&p[0]).ok_or_else(|| {
            Error::Parse(format!("{}:{lineno}: unknown user {}", ratings_path.display(), p[0]))
        })?;
        let movie = movies.get(&p[1]).ok_or_else(|| {
            Error::Parse(format!("{}:{lineno}: unknown movie {}", ratings_path.display(), p[1]))
        })?;
        let row = [
            user[0].as_str(),
            user[1].as_str(),
            user[2].as_str(),
            user[3].as_str(),
            movie[0].as_str(),
            &year_of_timestamp(ts).to_string(),
            movie[1].as_str(),
        ];
        let escaped: Vec<String> = row.iter().map(|v| csv_field(v)).collect();
        writeln!(out, "{},{label}", escaped.join(",")).map_err(io_err)?;
        stats.kept += 1;
    }
    out.flush().map_err(io_err)?;
    schema().save(out_schema)?;
    Ok(stats)
}

fn csv_field(v: &str) -> String {
    if v.contains([',', '"', '\n']) {
        format!("\"{}\"", v.replace('"', "\"\""))
    } else {
        v.to_string()
    }
}
