use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::ScenarioSet;
use crate::error::{Error, Result};

/// Writes `window_id, scenario_id, step, power_kw, projected_flag, wind_ms`
/// rows after a `# mode=… seed=… rated_power_kw=…` line.
pub fn write_scenarios_csv(path: &Path, sets: &[ScenarioSet]) -> Result<()> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Shape("no scenario sets to write".into()))?;
    let mut out = format!(
        "# mode={} seed={} rated_power_kw={}\n",
        first.mode, first.seed, first.rated_kw
    );
    out.push_str("window_id,scenario_id,step,power_kw,projected_flag,wind_ms\n");
    for set in sets {
        for (m, (row, flags)) in set.power.iter().zip(&set.projected).enumerate() {
            for (h, (p, f)) in row.iter().zip(flags).enumerate() {
                out.push_str(&format!(
                    "{},{m},{h},{p},{},{}\n",
                    set.window_id, *f as u8, set.wind[h]
                ));
            }
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// scenario → step → (power, flag, wind)
type Scenarios = BTreeMap<usize, BTreeMap<usize, (f64, bool, f64)>>;

pub fn read_scenarios_csv(path: &Path) -> Result<Vec<ScenarioSet>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |m: String| Error::format(path, m);
    let header = text
        .lines()
        .next()
        .filter(|l| l.starts_with('#'))
        .ok_or_else(|| err("missing metadata line".into()))?;
    let meta: BTreeMap<&str, &str> = header[1..]
        .split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .collect();
    let mode = meta
        .get("mode")
        .ok_or_else(|| err("missing mode".into()))?
        .to_string();
    let seed: u64 = meta
        .get("seed")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| err("missing seed".into()))?;
    let rated_kw: f64 = meta
        .get("rated_power_kw")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| err("missing rated_power_kw".into()))?;

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut cells: BTreeMap<usize, Scenarios> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", rec.len())));
        }
        let num = |i: usize| {
            rec[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| err(format!("bad number {:?}", &rec[i])))
        };
        let idx = |i: usize| {
            rec[i]
                .trim()
                .parse::<usize>()
                .map_err(|_| err(format!("bad index {:?}", &rec[i])))
        };
        let flag = match rec[4].trim() {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("bad projected_flag {other:?}"))),
        };
        cells
            .entry(idx(0)?)
            .or_default()
            .entry(idx(1)?)
            .or_default()
            .insert(idx(2)?, (num(3)?, flag, num(5)?));
    }
    let mut sets = Vec::with_capacity(cells.len());
    for (window_id, scenarios) in cells {
        let horizon = scenarios.values().next().map_or(0, |s| s.len());
        let dense = scenarios.keys().copied().eq(0..scenarios.len())
            && scenarios
                .values()
                .all(|s| s.len() == horizon && s.keys().copied().eq(0..horizon));
        if !dense {
            return Err(err(format!(
                "window {window_id} is not a full scenario × step grid"
            )));
        }
        let first = scenarios.values().next().expect("non-empty");
        let wind = first.values().map(|c| c.2).collect();
        let set = ScenarioSet {
            window_id,
            power: scenarios
                .values()
                .map(|s| s.values().map(|c| c.0).collect())
                .collect(),
            projected: scenarios
                .values()
                .map(|s| s.values().map(|c| c.1).collect())
                .collect(),
            wind,
            rated_kw,
            mode: mode.clone(),
            seed,
            warnings: 0,
        };
        set.validate()?;
        sets.push(set);
    }
    Ok(sets)
}
