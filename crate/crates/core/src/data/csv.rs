//! Argoverse-style CSV scenario files: `TIMESTAMP,TRACK_ID,OBJECT_TYPE,X,Y,CITY_NAME`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Waypoint;
use crate::scenario::{AgentTrack, ObjectType, Scenario, FUTURE_LEN, HISTORY_LEN};

pub const CSV_HEADER: [&str; 6] = ["TIMESTAMP", "TRACK_ID", "OBJECT_TYPE", "X", "Y", "CITY_NAME"];

/// Significant digits written for coordinates and timestamps.
pub const SIGNIFICANT_DIGITS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub history_len: usize,
    pub future_len: usize,
    /// When loading a directory, log and skip files that fail instead of aborting.
    pub skip_invalid: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self { history_len: HISTORY_LEN, future_len: FUTURE_LEN, skip_invalid: false }
    }
}

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits, returning the shortest decimal text
/// that parses back to the rounded value.
pub fn format_sig(v: f64) -> String {
    let rounded: f64 = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v).parse().expect("formatted float parses");
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded}")
}

fn malformed(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedRow { path: path.to_path_buf(), line, reason: reason.into() }
}

/// Parses one scenario file. The scenario id is the file stem.
pub fn load_csv_file(path: &Path, opts: &CsvOptions) -> Result<Scenario> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => malformed(path, 1, format!("{other:?}")),
    })?;
    let header = reader.headers().map_err(|e| malformed(path, 1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(malformed(path, 1, format!("header must be {}", CSV_HEADER.join(","))));
    }

    struct Row {
        timestamp: f64,
        track: String,
        kind: ObjectType,
        point: Waypoint,
        line: usize,
    }
    let mut rows = Vec::new();
    let mut city = String::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            malformed(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(i).unwrap_or("");
        let number = |i: usize| -> Result<f64> {
            let v: f64 = field(i).parse().map_err(|_| malformed(path, line, format!("bad {} {:?}", CSV_HEADER[i], field(i))))?;
            if !v.is_finite() {
                return Err(malformed(path, line, format!("non-finite {}", CSV_HEADER[i])));
            }
            Ok(v)
        };
        if record.len() != CSV_HEADER.len() {
            return Err(malformed(path, line, format!("expected 6 fields, found {}", record.len())));
        }
        let kind: ObjectType = field(2).parse().map_err(|_| malformed(path, line, format!("unknown OBJECT_TYPE {:?}", field(2))))?;
        if field(1).is_empty() {
            return Err(malformed(path, line, "empty TRACK_ID"));
        }
        rows.push(Row {
            timestamp: number(0)?,
            track: field(1).to_string(),
            kind,
            point: Waypoint::new(number(3)?, number(4)?),
            line,
        });
        if city.is_empty() {
            city = field(5).to_string();
        }
    }

    let mut stamps: Vec<f64> = rows.iter().map(|r| r.timestamp).collect();
    stamps.sort_by(f64::total_cmp);
    stamps.dedup();
    let expected = opts.history_len + opts.future_len;
    if stamps.len() != expected {
        return Err(Error::WrongFrameCount { path: path.to_path_buf(), expected, found: stamps.len() });
    }

    // track order: first appearance
    let mut order: Vec<String> = Vec::new();
    let mut tracks: HashMap<String, (ObjectType, Vec<Option<Waypoint>>)> = HashMap::new();
    for r in &rows {
        let frame = stamps.partition_point(|&t| t < r.timestamp);
        let entry = tracks.entry(r.track.clone()).or_insert_with(|| {
            order.push(r.track.clone());
            (r.kind, vec![None; expected])
        });
        if entry.0 != r.kind {
            return Err(malformed(path, r.line, format!("track {} changes OBJECT_TYPE", r.track)));
        }
        if entry.1[frame].replace(r.point).is_some() {
            return Err(malformed(path, r.line, format!("duplicate row for track {} at frame {frame}", r.track)));
        }
    }
    if !tracks.values().any(|(k, _)| *k == ObjectType::Agent) {
        return Err(Error::MissingAgent(path.to_path_buf()));
    }
    let agents = order
        .iter()
        .map(|id| {
            let (kind, obs) = &tracks[id];
            AgentTrack::from_observations(id.clone(), *kind, obs)
        })
        .collect::<Result<Vec<_>>>()?;
    let id = path.file_stem().map_or_else(|| "scenario".to_string(), |s| s.to_string_lossy().into_owned());
    let mut scenario = Scenario::new(id, agents, vec![], opts.history_len, opts.future_len)
        .map_err(|e| malformed(path, 0, e.to_string()))?;
    scenario.city = city;
    Ok(scenario)
}

/// Loads a single CSV file or every `*.csv` in a directory (sorted by file name).
pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Vec<Scenario>> {
    let path = path.as_ref();
    if !path.is_dir() {
        return Ok(vec![load_csv_file(path, opts)?]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    let mut out = Vec::with_capacity(files.len());
    for file in files {
        match load_csv_file(&file, opts) {
            Ok(s) => out.push(s),
            Err(e) if opts.skip_invalid && !matches!(e, Error::Io(_)) => log::warn!("skipping {}: {e}", file.display()),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Writes the observed rows of every track. Frame `i` gets timestamp `i * dt`.
pub fn save_csv(path: impl AsRef<Path>, scenario: &Scenario) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Io(e.into()))?;
    let csv_err = |e: csv::Error| Error::Io(e.into());
    writer.write_record(CSV_HEADER).map_err(csv_err)?;
    let dt = scenario.future().ok().flatten().map_or(crate::geometry::DEFAULT_DT, |f| f.dt());
    let mut by_frame: BTreeMap<usize, Vec<&AgentTrack>> = BTreeMap::new();
    for a in &scenario.agents {
        for f in (0..a.positions.len()).filter(|&f| a.is_present(f)) {
            by_frame.entry(f).or_default().push(a);
        }
    }
    for (frame, tracks) in by_frame {
        let stamp = format_sig(frame as f64 * dt);
        for a in tracks {
            let p = a.positions[frame];
            writer
                .write_record([
                    stamp.as_str(),
                    a.track_id.as_str(),
                    a.object_type.csv_tag(),
                    &format_sig(p.x),
                    &format_sig(p.y),
                    scenario.city.as_str(),
                ])
                .map_err(csv_err)?;
        }
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    fn single_track_csv(frames: usize, kind: &str) -> String {
        let mut s = CSV_HEADER.join(",") + "\n";
        for i in 0..frames {
            s += &format!("{}.{},t1,{kind},{},{},PIT\n", 315_000_000 + i / 10, i % 10, i as f64 * 0.5, -(i as f64));
        }
        s
    }

    #[test]
    fn fifty_row_single_track() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "123.csv", &single_track_csv(50, "AGENT"));
        let s = load_csv_file(&p, &CsvOptions::default()).unwrap();
        assert_eq!(s.scenario_id, "123");
        assert_eq!(s.city, "PIT");
        assert_eq!(s.agents.len(), 1);
        assert_eq!(s.agents[0].positions.len(), 50);
        assert_eq!(s.agents[0].positions[49], Waypoint::new(24.5, -49.0));
    }

    #[test]
    fn errors() {
        let dir = tempfile::tempdir().unwrap();
        let opts = CsvOptions::default();
        let p = write(dir.path(), "a.csv", &single_track_csv(50, "AV"));
        assert!(matches!(load_csv_file(&p, &opts), Err(Error::MissingAgent(_))));
        let p = write(dir.path(), "b.csv", &single_track_csv(49, "AGENT"));
        assert!(matches!(load_csv_file(&p, &opts), Err(Error::WrongFrameCount { expected: 50, found: 49, .. })));
        let body = single_track_csv(50, "AGENT").replacen(",PIT\n", ",PIT\n1,t1,AGENT,x,2,PIT\n", 3);
        let p = write(dir.path(), "c.csv", &body);
        match load_csv_file(&p, &opts) {
            Err(Error::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let body = single_track_csv(50, "AGENT").replacen("t1,AGENT,0,-0,", "t1,AGENT,NaN,0,", 1);
        let p = write(dir.path(), "d.csv", &body);
        assert!(matches!(load_csv_file(&p, &opts), Err(Error::MalformedRow { line: 2, .. })));
        let p = write(dir.path(), "e.csv", "A,B\n1,2\n");
        assert!(matches!(load_csv_file(&p, &opts), Err(Error::MalformedRow { line: 1, .. })));
    }

    #[test]
    fn directory_skip_mode() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "1.csv", &single_track_csv(50, "AGENT"));
        write(dir.path(), "2.csv", &single_track_csv(50, "AV"));
        write(dir.path(), "3.csv", &single_track_csv(50, "AGENT"));
        write(dir.path(), "notes.txt", "ignored");
        assert!(load_csv(dir.path(), &CsvOptions::default()).is_err());
        let ok = load_csv(dir.path(), &CsvOptions { skip_invalid: true, ..CsvOptions::default() }).unwrap();
        let ids: Vec<_> = ok.iter().map(|s| s.scenario_id.as_str()).collect();
        assert_eq!(ids, ["1", "3"]);
    }

    #[test]
    fn gaps_are_padded() {
        let mut body = single_track_csv(50, "AGENT");
        body += "315000000.3,n,OTHERS,7,7,PIT\n315000001.0,n,OTHERS,8,8,PIT\n";
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "g.csv", &body);
        let s = load_csv_file(&p, &CsvOptions::default()).unwrap();
        let n = &s.agents[1];
        assert_eq!(n.object_type, ObjectType::Other);
        assert_eq!(n.present.iter().filter(|&&p| p).count(), 2);
        assert_eq!(n.positions[0], Waypoint::new(7.0, 7.0));
        assert_eq!(n.positions[5], Waypoint::new(7.0, 7.0));
        assert_eq!(n.positions[10], Waypoint::new(8.0, 8.0));
        assert_eq!(n.positions[49], Waypoint::new(8.0, 8.0));
    }

    #[test]
    fn significant_digits() {
        assert_eq!(format_sig(1.0), "1");
        assert_eq!(format_sig(0.1234567891234), "0.123456789");
        assert_eq!(format_sig(-1234.56789123), "-1234.56789");
        assert_eq!(format_sig(-0.0), "0");
    }
}
