//! CSV serialization for the run artifacts. Every record type that lands in
//! a file round-trips losslessly through its row format.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::server::{EventKind, MetricsRecord};
use crate::worker::{EpisodeRecord, TimingEvent, TimingSample};

use super::serial::CurvePoint;

pub trait CsvRecord: Sized {
    const HEADER: &'static str;
    fn to_row(&self) -> String;
    fn parse_row(line: &str) -> Result<Self>;
}

pub fn write_csv<R: CsvRecord>(path: &Path, rows: &[R]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{}", R::HEADER)?;
    for row in rows {
        writeln!(out, "{}", row.to_row())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: CsvRecord>(path: &Path) -> Result<Vec<R>> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text)
}

pub fn parse_csv<R: CsvRecord>(text: &str) -> Result<Vec<R>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == R::HEADER => {}
        Some(other) => {
            return Err(Error::Config(format!(
                "csv header mismatch: expected '{}', got '{other}'",
                R::HEADER
            )))
        }
        None => return Err(Error::Config("empty csv".into())),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(R::parse_row)
        .collect()
}

fn fields<'a>(line: &'a str, n: usize) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = line.split(',').collect();
    if parts.len() != n {
        return Err(Error::Config(format!(
            "csv row has {} fields, expected {n}: '{line}'",
            parts.len()
        )));
    }
    Ok(parts)
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Config(format!("bad {what} field '{s}'")))
}

impl CsvRecord for MetricsRecord {
    const HEADER: &'static str = "event,worker_id,generation,staleness,duration_us";

    fn to_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.event.as_str(),
            self.worker_id,
            self.generation,
            self.staleness,
            self.duration_us
        )
    }

    fn parse_row(line: &str) -> Result<Self> {
        let f = fields(line, 5)?;
        let event = match f[0] {
            "fetch" => EventKind::Fetch,
            "apply" => EventKind::Apply,
            "reject" => EventKind::Reject,
            other => return Err(Error::Config(format!("unknown event '{other}'"))),
        };
        Ok(MetricsRecord {
            event,
            worker_id: parse(f[1], "worker_id")?,
            generation: parse(f[2], "generation")?,
            staleness: parse(f[3], "staleness")?,
            duration_us: parse(f[4], "duration_us")?,
        })
    }
}

impl CsvRecord for EpisodeRecord {
    const HEADER: &'static str = "episode,steps,apples,reward";

    fn to_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.episode, self.steps, self.apples, self.reward
        )
    }

    fn parse_row(line: &str) -> Result<Self> {
        let f = fields(line, 4)?;
        Ok(EpisodeRecord {
            episode: parse(f[0], "episode")?,
            steps: parse(f[1], "steps")?,
            apples: parse(f[2], "apples")?,
            reward: parse(f[3], "reward")?,
        })
    }
}

impl CsvRecord for TimingSample {
    const HEADER: &'static str = "event,iteration,duration_us";

    fn to_row(&self) -> String {
        format!(
            "{},{},{}",
            self.event.as_str(),
            self.iteration,
            self.duration_us
        )
    }

    fn parse_row(line: &str) -> Result<Self> {
        let f = fields(line, 3)?;
        let event = match f[0] {
            "comms" => TimingEvent::Comms,
            "gradient" => TimingEvent::Gradient,
            other => return Err(Error::Config(format!("unknown timing event '{other}'"))),
        };
        Ok(TimingSample {
            event,
            iteration: parse(f[1], "iteration")?,
            duration_us: parse(f[2], "duration_us")?,
        })
    }
}

impl CsvRecord for CurvePoint {
    const HEADER: &'static str = "updates,wall_clock_s,mean_reward";

    fn to_row(&self) -> String {
        // {:?} prints f64 with full round-trip precision.
        format!(
            "{},{:?},{:?}",
            self.updates, self.wall_clock_s, self.mean_reward
        )
    }

    fn parse_row(line: &str) -> Result<Self> {
        let f = fields(line, 3)?;
        Ok(CurvePoint {
            updates: parse(f[0], "updates")?,
            wall_clock_s: parse(f[1], "wall_clock_s")?,
            mean_reward: parse(f[2], "mean_reward")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_round_trip() {
        let rows = vec![
            MetricsRecord {
                event: EventKind::Fetch,
                worker_id: 3,
                generation: 17,
                staleness: 0,
                duration_us: 42,
            },
            MetricsRecord {
                event: EventKind::Apply,
                worker_id: 1,
                generation: 18,
                staleness: 4,
                duration_us: 120,
            },
        ];
        let text = format!(
            "{}\n{}\n{}\n",
            MetricsRecord::HEADER,
            rows[0].to_row(),
            rows[1].to_row()
        );
        let back: Vec<MetricsRecord> = parse_csv(&text).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn curve_round_trip_preserves_floats() {
        let rows = vec![CurvePoint {
            updates: 10,
            wall_clock_s: 0.1 + 0.2,
            mean_reward: -0.333333333333333314829616256247,
        }];
        let text = format!("{}\n{}\n", CurvePoint::HEADER, rows[0].to_row());
        let back: Vec<CurvePoint> = parse_csv(&text).unwrap();
        assert_eq!(back[0].updates, rows[0].updates);
        assert_eq!(back[0].wall_clock_s.to_bits(), rows[0].wall_clock_s.to_bits());
        assert_eq!(back[0].mean_reward.to_bits(), rows[0].mean_reward.to_bits());
    }

    #[test]
    fn header_mismatch_and_bad_fields_error() {
        assert!(parse_csv::<MetricsRecord>("nope\n").is_err());
        let text = format!("{}\nfetch,1,2,3\n", MetricsRecord::HEADER);
        assert!(parse_csv::<MetricsRecord>(&text).is_err());
        let text = format!("{}\nwat,1,2,3,4\n", MetricsRecord::HEADER);
        assert!(parse_csv::<MetricsRecord>(&text).is_err());
    }
}
