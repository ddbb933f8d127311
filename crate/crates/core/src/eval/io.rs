//! Trajectory CSV and statistics JSON files.

use std::fs::File;
use std::path::Path;

use super::{CampaignStats, EvalError, TrajectoryRecord};

pub const TRAJECTORY_HEADER: &str =
    "t,x,y,z,vx,vy,vz,mass,ox,oy,oz,ovx,ovy,ovz,omass,fcx,fcy,fcz,fax,fay,faz,reward";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, e: impl std::fmt::Display) -> EvalError {
    EvalError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes one CSV row per record under [`TRAJECTORY_HEADER`]. Floats are
/// written in shortest round-trip form.
pub fn write_trajectory(records: &[TrajectoryRecord], path: &Path) -> Result<(), EvalError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(TRAJECTORY_HEADER.split(',')).map_err(|e| format_err(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| format_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRecord>, EvalError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers().map_err(|e| format_err(path, e))?;
    if header.iter().collect::<Vec<_>>().join(",") != TRAJECTORY_HEADER {
        return Err(format_err(path, "unexpected trajectory header"));
    }
    r.deserialize().map(|row| row.map_err(|e| format_err(path, e))).collect()
}

pub fn write_stats(stats: &CampaignStats, path: &Path) -> Result<(), EvalError> {
    let text = serde_json::to_string_pretty(stats).map_err(|e| format_err(path, e))?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_stats(path: &Path) -> Result<CampaignStats, EvalError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::eval::{run_campaign, run_episode};
    use crate::policy::MlpParams;
    use crate::seed::rng_from_seed;
    use rand::Rng;

    fn random_record(rng: &mut impl Rng) -> TrajectoryRecord {
        let mut v = [0.0; 22];
        v.iter_mut().for_each(|x| *x = rng.gen_range(-1e3..1e3) * 10f64.powi(rng.gen_range(-12..3)));
        TrajectoryRecord {
            t: v[0],
            x: v[1],
            y: v[2],
            z: v[3],
            vx: v[4],
            vy: v[5],
            vz: v[6],
            mass: v[7],
            ox: v[8],
            oy: v[9],
            oz: v[10],
            ovx: v[11],
            ovy: v[12],
            ovz: v[13],
            omass: v[14],
            fcx: v[15],
            fcy: v[16],
            fcz: v[17],
            fax: v[18],
            fay: v[19],
            faz: v[20],
            reward: v[21],
        }
    }

    #[test]
    fn empty_trajectory_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_trajectory(&[], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), format!("{TRAJECTORY_HEADER}\n"));
        assert!(read_trajectory(&p).unwrap().is_empty());
    }

    #[test]
    fn trajectory_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let mut rng = rng_from_seed(9);
        let recs: Vec<_> = (0..200).map(|_| random_record(&mut rng)).collect();
        write_trajectory(&recs, &p).unwrap();
        assert_eq!(read_trajectory(&p).unwrap(), recs);
    }

    #[test]
    fn full_episode_has_1001_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let cfg = EnvConfig {
            pos_dispersion: 0.0,
            vel_dispersion: 0.0,
            ..EnvConfig::default()
        };
        let (rec, traj) = run_episode(&MlpParams::zeros(8), &cfg, 1, true).unwrap();
        assert_eq!(rec.elapsed, 1000.0);
        write_trajectory(&traj, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 1001);
        let back = read_trajectory(&p).unwrap();
        assert!(back.windows(2).all(|w| w[1].t - w[0].t == 1.0));
    }

    #[test]
    fn stats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        let s = run_campaign(&MlpParams::init(8, &mut rng_from_seed(1)), &EnvConfig::default(), 4, 3).unwrap();
        write_stats(&s, &p).unwrap();
        assert_eq!(read_stats(&p).unwrap(), s);
    }

    #[test]
    fn unwritable_path_names_path() {
        let err = write_stats(
            &crate::eval::CampaignStats::from_episodes(vec![], 0, 0.0),
            Path::new("/nonexistent-dir/s.json"),
        )
        .unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/s.json"));
    }
}
