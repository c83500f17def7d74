use std::path::Path;

use super::{PoseState, RawObservation, Sample, Trajectory, OBS_DIM, STATE_DIM};
use crate::error::{Error, Result};

/// Column names, in file order.
pub const CSV_HEADER: [&str; 2 + OBS_DIM + STATE_DIM] = [
    "subject",
    "motion",
    "dt",
    "theta_a1",
    "theta_a2",
    "theta_a3",
    "theta_b1",
    "theta_b2",
    "theta_b3",
    "v_x",
    "v_y",
    "v_z",
    "alpha_x",
    "alpha_y",
    "alpha_z",
    "gamma_x",
    "gamma_y",
    "gamma_z",
    "phi_x",
    "phi_y",
    "phi_z",
    "rho",
    "obs_rh_sin",
    "obs_rh_cos",
    "ql_a1",
    "ql_a2",
    "ql_a3",
    "ql_b1",
    "ql_b2",
    "ql_b3",
    "qu_a1",
    "qu_a2",
    "qu_a3",
    "qu_b1",
    "qu_b2",
    "qu_b3",
    "rh_sin",
    "rh_cos",
];

/// Writes all trajectories to one CSV file. Floats use the shortest text that
/// parses back to the same `f64`.
pub fn save_dataset(trajs: &[Trajectory], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    let mut row: Vec<String> = Vec::with_capacity(CSV_HEADER.len());
    for t in trajs {
        for s in &t.samples {
            row.clear();
            row.push(t.subject.clone());
            row.push(t.motion.clone());
            row.extend(s.obs.to_array().iter().map(|v| v.to_string()));
            row.extend(s.state.to_array().iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset; consecutive rows with the same `(subject, motion)` form
/// one trajectory.
pub fn load_dataset(path: &Path) -> Result<Vec<Trajectory>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut records = r.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(Error::SchemaMismatch("missing header row".into())),
    };
    if header.len() != CSV_HEADER.len() || header.iter().zip(CSV_HEADER).any(|(a, b)| a != b) {
        return Err(Error::SchemaMismatch(format!(
            "expected {} columns starting `subject,motion,dt`, found {}",
            CSV_HEADER.len(),
            header.len()
        )));
    }

    let mut out: Vec<Trajectory> = Vec::new();
    let mut values = [0.0; OBS_DIM + STATE_DIM];
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec?;
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", CSV_HEADER.len(), rec.len()),
            });
        }
        for (k, field) in rec.iter().skip(2).enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("column `{}`: cannot parse `{field}`", CSV_HEADER[k + 2]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column `{}` is not finite", CSV_HEADER[k + 2]),
                });
            }
            values[k] = v;
        }
        let sample = Sample {
            obs: RawObservation::from_slice(&values[..OBS_DIM])?,
            state: PoseState::from_slice(&values[OBS_DIM..])?,
        };
        let (subject, motion) = (&rec[0], &rec[1]);
        match out.last_mut() {
            Some(t) if t.subject == subject && t.motion == motion => t.samples.push(sample),
            _ => out.push(Trajectory {
                subject: subject.to_string(),
                motion: motion.to_string(),
                samples: vec![sample],
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn random_trajs() -> Vec<Trajectory> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        (0..3)
            .map(|k| Trajectory {
                subject: format!("s{}", k / 2),
                motion: format!("m{k}"),
                samples: (0..10)
                    .map(|_| {
                        let v: Vec<f64> = (0..OBS_DIM + STATE_DIM)
                            .map(|_| rng.random_range(-10.0..10.0) as f32 as f64 * 1.000001)
                            .collect();
                        Sample {
                            obs: RawObservation::from_slice(&v[..OBS_DIM]).unwrap(),
                            state: PoseState::from_slice(&v[OBS_DIM..]).unwrap(),
                        }
                    })
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let trajs = random_trajs();
        save_dataset(&trajs, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in trajs.iter().zip(&back) {
            assert_eq!(a.subject, b.subject);
            assert_eq!(a.motion, b.motion);
            for (x, y) in a.samples.iter().zip(&b.samples) {
                for (p, q) in x.obs.to_array().iter().zip(y.obs.to_array()) {
                    assert_eq!(p.to_bits(), q.to_bits());
                }
                for (p, q) in x.state.to_array().iter().zip(y.state.to_array()) {
                    assert_eq!(p.to_bits(), q.to_bits());
                }
            }
        }
    }

    #[test]
    fn header_only_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        save_dataset(&[], &path).unwrap();
        assert!(load_dataset(&path).unwrap().is_empty());
    }

    #[test]
    fn short_header_is_schema_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "{}", CSV_HEADER[..35].join(",")).unwrap();
        drop(f);
        assert!(matches!(load_dataset(&path), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn bad_rows_are_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let header = CSV_HEADER.join(",");
        let good: Vec<String> = (0..OBS_DIM + STATE_DIM).map(|i| i.to_string()).collect();
        let mut nan = good.clone();
        nan[4] = "NaN".into();
        std::fs::write(
            &path,
            format!("{header}\ns,m,{}\ns,m,{}\n", good.join(","), nan.join(",")),
        )
        .unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(Error::Parse { line: 3, .. })
        ));
        std::fs::write(&path, format!("{header}\ns,m,{}\n", good[..20].join(","))).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
