//! Forecast file: one sampled point per line.
//!
//! ```text
//! #config_hash=<hex>
//! #h=<draws>
//! #t_obs=<frames>
//! #t_pred=<frames>
//! window,draw,agent_id,frame,x,y
//! 0,0,car0,5,12.5,-2.25
//! ```
//!
//! Header lines are `#key=value`. Coordinates are written in the shortest
//! form that parses back to the same `f64`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use trajrisk::geometry::Point;
use trajrisk::{Error, Result};

pub const COLUMNS: &str = "window,draw,agent_id,frame,x,y";

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRow {
    pub window: usize,
    pub draw: usize,
    pub agent_id: String,
    pub frame: i64,
    pub position: Point,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForecastFile {
    /// Header entries in file order.
    pub header: Vec<(String, String)>,
    pub rows: Vec<ForecastRow>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

impl ForecastFile {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        let v = self
            .get(key)
            .ok_or_else(|| Error::Validation(format!("forecast header lacks `{key}`")))?;
        v.parse()
            .map_err(|_| Error::Validation(format!("forecast header `{key}={v}` is not a count")))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(out, "#{k}={v}");
        }
        let _ = writeln!(out, "{COLUMNS}");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.window, r.draw, r.agent_id, r.frame, r.position.x, r.position.y
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut f = ForecastFile::default();
        let mut columns = false;
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if !columns {
                if let Some(h) = line.strip_prefix('#') {
                    let (k, v) = h
                        .split_once('=')
                        .ok_or_else(|| parse_err(lineno, "header lines must be `#key=value`"))?;
                    f.header.push((k.to_string(), v.to_string()));
                    continue;
                }
                if line != COLUMNS {
                    return Err(parse_err(lineno, format!("expected column line `{COLUMNS}`")));
                }
                columns = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(parse_err(lineno, format!("expected 6 fields, found {}", fields.len())));
            }
            let int = |s: &str, what: &str| -> Result<i64> {
                s.parse().map_err(|_| parse_err(lineno, format!("invalid {what} `{s}`")))
            };
            let float = |s: &str, what: &str| -> Result<f64> {
                let v: f64 = s.parse().map_err(|_| parse_err(lineno, format!("invalid {what} `{s}`")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(lineno, format!("non-finite {what}")))
                }
            };
            let window = int(fields[0], "window")?;
            let draw = int(fields[1], "draw")?;
            if window < 0 || draw < 0 {
                return Err(parse_err(lineno, "window and draw must be non-negative"));
            }
            if fields[2].is_empty() {
                return Err(parse_err(lineno, "empty agent id"));
            }
            f.rows.push(ForecastRow {
                window: window as usize,
                draw: draw as usize,
                agent_id: fields[2].to_string(),
                frame: int(fields[3], "frame")?,
                position: Point::new(float(fields[4], "x")?, float(fields[5], "y")?),
            });
        }
        if !columns {
            return Err(parse_err(text.lines().count().max(1), "missing column line"));
        }
        Ok(f)
    }

    /// Row indices grouped by window.
    pub fn by_window(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            out.entry(r.window).or_default().push(i);
        }
        out
    }

    /// Samples of one window as `[h][agent][frame]`, requiring exactly one row
    /// per draw, agent and frame.
    pub fn samples(&self, rows: &[usize], h: usize, ids: &[String], frames: &[i64]) -> Result<Vec<Vec<Vec<Point>>>> {
        let agent: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let frame: HashMap<i64, usize> = frames.iter().enumerate().map(|(k, &f)| (f, k)).collect();
        let mut out = vec![vec![vec![None; frames.len()]; ids.len()]; h];
        for &r in rows {
            let row = &self.rows[r];
            let what = || format!("window {} draw {} agent `{}` frame {}", row.window, row.draw, row.agent_id, row.frame);
            let (Some(&i), Some(&k)) = (agent.get(row.agent_id.as_str()), frame.get(&row.frame)) else {
                return Err(Error::Validation(format!("{}: no such agent or future frame", what())));
            };
            if row.draw >= h {
                return Err(Error::Validation(format!("{}: draw outside 0..{h}", what())));
            }
            let slot = &mut out[row.draw][i][k];
            if slot.is_some() {
                return Err(Error::Validation(format!("{}: duplicate row", what())));
            }
            *slot = Some(row.position);
        }
        out.into_iter()
            .map(|d| {
                d.into_iter()
                    .map(|a| {
                        a.into_iter()
                            .collect::<Option<Vec<Point>>>()
                            .ok_or_else(|| Error::Validation("forecast is missing rows for a window".into()))
                    })
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn file(rows: Vec<ForecastRow>) -> ForecastFile {
        ForecastFile {
            header: vec![("config_hash".into(), "ab12".into()), ("h".into(), "2".into())],
            rows,
        }
    }

    fn row(window: usize, draw: usize, id: &str, frame: i64, x: f64, y: f64) -> ForecastRow {
        ForecastRow {
            window,
            draw,
            agent_id: id.into(),
            frame,
            position: Point::new(x, y),
        }
    }

    #[test]
    fn worked_example() {
        let f = file(vec![row(0, 1, "car0", 5, 12.5, -2.25), row(3, 0, "ped1", 10, 0.1, 1e-7)]);
        let text = f.to_text();
        assert_eq!(
            text,
            "#config_hash=ab12\n#h=2\nwindow,draw,agent_id,frame,x,y\n0,1,car0,5,12.5,-2.25\n3,0,ped1,10,0.1,0.0000001\n"
        );
        assert_eq!(ForecastFile::parse(&text).unwrap(), f);
        assert_eq!(f.get_usize("h").unwrap(), 2);
        assert!(f.get_usize("t_pred").is_err());
    }

    #[test]
    fn rejects_malformed() {
        for text in [
            "",
            "#h=2\n",
            "#h\nwindow,draw,agent_id,frame,x,y\n",
            "window,draw,agent,frame,x,y\n",
            "window,draw,agent_id,frame,x,y\n0,0,a,1,2\n",
            "window,draw,agent_id,frame,x,y\n0,0,a,1,2,nan\n",
            "window,draw,agent_id,frame,x,y\n-1,0,a,1,2,3\n",
            "window,draw,agent_id,frame,x,y\n0,0,,1,2,3\n",
        ] {
            assert!(ForecastFile::parse(text).unwrap_err().is_validation(), "{text:?}");
        }
    }

    #[test]
    fn samples_require_complete_unique_rows() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let frames = [5, 6];
        let mut rows = Vec::new();
        for d in 0..2 {
            for id in ["b", "a"] {
                for f in frames {
                    rows.push(row(0, d, id, f, d as f64, f as f64));
                }
            }
        }
        let f = file(rows);
        let all: Vec<usize> = (0..f.rows.len()).collect();
        let s = f.samples(&all, 2, &ids, &frames).unwrap();
        assert_eq!(s[1][0][1], Point::new(1.0, 6.0));
        assert!(f.samples(&all[1..], 2, &ids, &frames).is_err());
        assert!(f.samples(&all, 1, &ids, &frames).is_err());
        let mut dup = all.clone();
        dup.push(0);
        assert!(f.samples(&dup, 2, &ids, &frames).is_err());
        assert!(f.samples(&all, 2, &ids, &[5, 7]).is_err());
    }

    proptest! {
        #[test]
        fn text_round_trip_is_exact(
            pts in proptest::collection::vec((0usize..5, 0usize..30, -1000i64..1000, -1e6f64..1e6, -1e6f64..1e6), 0..40)
        ) {
            let f = file(pts.iter().map(|&(w, d, fr, x, y)| row(w, d, "rider2", fr, x, y)).collect());
            let back = ForecastFile::parse(&f.to_text()).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
