//! On-disk trajectories: `frame_000.png` ... (16-bit RGB) plus `meta.jsonl`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scene::Trajectory;
use super::spec::TransitionSpec;
use crate::error::{Error, Result};
use crate::frame::Frame;

pub const TRAJECTORY_FORMAT_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.jsonl";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub format_version: u32,
    pub spec: TransitionSpec,
    pub seed: u64,
    pub frames: Vec<String>,
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:03}.png")
}

pub fn save_trajectory(traj: &Trajectory, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(traj.len());
    for (i, f) in traj.frames.iter().enumerate() {
        let name = frame_file_name(i);
        f.save_png(dir.join(&name))?;
        names.push(name);
    }
    let meta = TrajectoryMeta {
        format_version: TRAJECTORY_FORMAT_VERSION,
        spec: traj.spec.clone(),
        seed: traj.seed,
        frames: names,
    };
    let mut file = fs::File::create(dir.join(META_FILE))?;
    writeln!(file, "{}", serde_json::to_string(&meta)?)?;
    Ok(())
}

pub fn load_trajectory(dir: impl AsRef<Path>) -> Result<Trajectory> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(META_FILE))?;
    let line = text.lines().find(|l| !l.trim().is_empty()).ok_or_else(|| {
        Error::InvalidInput(format!("{} is empty", dir.join(META_FILE).display()))
    })?;
    let meta: TrajectoryMeta = serde_json::from_str(line)?;
    if meta.format_version != TRAJECTORY_FORMAT_VERSION {
        return Err(Error::InvalidInput(format!(
            "trajectory format version {} is not supported",
            meta.format_version
        )));
    }
    let frames = meta
        .frames
        .iter()
        .map(|n| Frame::load_png(dir.join(n)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory {
        spec: meta.spec,
        frames,
        seed: meta.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::scene::generate_trajectory;
    use crate::synthworld::spec::{SpecOptions, TransitionKind};

    #[test]
    fn round_trip_is_quantization_exact() {
        let spec =
            TransitionSpec::sample(TransitionKind::Melting, "ice", SpecOptions::default(), 2)
                .unwrap();
        let t = generate_trajectory(&spec, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_trajectory(&t, dir.path()).unwrap();
        let back = load_trajectory(dir.path()).unwrap();
        assert_eq!(back.spec, t.spec);
        assert_eq!(back.seed, 2);
        for (a, b) in t.frames.iter().zip(&back.frames) {
            assert_eq!(a.quantized().data(), b.data());
        }
    }
}
