use super::scene::Trajectory;
use crate::error::{Error, Result};
use crate::frame::Frame;

pub const DEFAULT_KEYFRAMES: usize = 6;

/// Indices round(k (T-1) / (N+1)) for k = 1..=N.
pub fn keyframe_indices(len: usize, n: usize) -> Result<Vec<usize>> {
    if len < n + 2 {
        return Err(Error::TrajectoryTooShort { len, needed: n + 2 });
    }
    Ok((1..=n)
        .map(|k| ((k * (len - 1)) as f64 / (n + 1) as f64).round() as usize)
        .collect())
}

/// Uniformly spaced interior frames of a trajectory.
pub fn sample_keyframes(traj: &Trajectory, n: usize) -> Result<Vec<Frame>> {
    Ok(keyframe_indices(traj.len(), n)?
        .into_iter()
        .map(|i| traj.frames[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn documented_index_sets() {
        assert_eq!(keyframe_indices(15, 6).unwrap(), vec![2, 4, 6, 8, 10, 12]);
        assert_eq!(keyframe_indices(8, 6).unwrap(), vec![1, 2, 3, 4, 5, 6]);
        assert!(matches!(
            keyframe_indices(7, 6),
            Err(Error::TrajectoryTooShort { len: 7, needed: 8 })
        ));
    }

    proptest! {
        #[test]
        fn indices_are_interior_and_increasing(n in 1usize..12, extra in 0usize..40) {
            let len = n + 2 + extra;
            let idx = keyframe_indices(len, n).unwrap();
            prop_assert_eq!(idx.len(), n);
            prop_assert!(idx.iter().all(|&i| i > 0 && i < len - 1));
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
