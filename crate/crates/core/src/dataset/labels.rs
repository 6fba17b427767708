use ndarray::Array2;

use crate::midi::DrumTrack;

/// Seconds per label frame; matches the spectrogram hop.
pub const FRAME_SECONDS: f64 = 0.010;

/// Frame × class training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRoll {
    /// 1.0 at onset cells, 0.0 elsewhere.
    pub onsets: Array2<f32>,
    /// `velocity / 127` at onset cells, 0.0 elsewhere.
    pub velocities: Array2<f32>,
}

impl LabelRoll {
    pub fn zeros(frames: usize, classes: usize) -> Self {
        LabelRoll { onsets: Array2::zeros((frames, classes)), velocities: Array2::zeros((frames, classes)) }
    }

    pub fn frames(&self) -> usize {
        self.onsets.nrows()
    }

    pub fn classes(&self) -> usize {
        self.onsets.ncols()
    }

    pub fn onset_count(&self) -> usize {
        self.onsets.iter().filter(|&&v| v > 0.5).count()
    }
}

/// Result of [`make_labels`].
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub roll: LabelRoll,
    /// Events past the last frame that were clamped onto it.
    pub clamped: usize,
}

/// Frame index for an onset time: nearest frame, exact halves round down.
pub fn frame_of(time: f64, frame_seconds: f64) -> usize {
    let x = time / frame_seconds;
    // ceil(x - 0.5) sends k + 0.5 to k and everything else to the nearest integer
    (x - 0.5).ceil().max(0.0) as usize
}

/// Single-frame onset labels for `track` on an `n_frames` grid.
///
/// Events in the same frame and class collapse to the loudest one.
pub fn make_labels(track: &DrumTrack, n_frames: usize, n_classes: usize) -> Labels {
    make_labels_with(track, n_frames, n_classes, FRAME_SECONDS)
}

pub fn make_labels_with(track: &DrumTrack, n_frames: usize, n_classes: usize, frame_seconds: f64) -> Labels {
    let mut roll = LabelRoll::zeros(n_frames, n_classes);
    let mut clamped = 0;
    if n_frames == 0 {
        return Labels { roll, clamped: track.len() };
    }
    for e in track.events() {
        let class = e.hit as usize;
        if class >= n_classes {
            continue;
        }
        let mut frame = frame_of(e.time, frame_seconds);
        if frame >= n_frames {
            frame = n_frames - 1;
            clamped += 1;
        }
        let v = f32::from(e.velocity) / 127.0;
        roll.onsets[[frame, class]] = 1.0;
        let cell = &mut roll.velocities[[frame, class]];
        *cell = cell.max(v);
    }
    if clamped > 0 {
        log::debug!("{clamped} onsets beyond {n_frames} frames were clamped to the last frame");
    }
    Labels { roll, clamped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midi::{DrumEvent, HitLevel, KD, SD};

    fn track(events: Vec<DrumEvent>) -> DrumTrack {
        DrumTrack::new(HitLevel::Group7, events, 1.0).unwrap()
    }

    #[test]
    fn half_frame_rounds_down() {
        let l = make_labels(&track(vec![DrumEvent::new(0.005, KD, 127)]), 100, 7);
        assert_eq!(l.roll.onsets[[0, 0]], 1.0);
        assert_eq!(l.roll.velocities[[0, 0]], 1.0);
        assert_eq!(l.roll.onset_count(), 1);
        assert_eq!(frame_of(0.015, 0.01), 1);
        assert_eq!(frame_of(0.0151, 0.01), 2);
        assert_eq!(frame_of(0.0149, 0.01), 1);
        assert_eq!(frame_of(0.03, 0.01), 3);
    }

    #[test]
    fn rapid_repeats_get_distinct_frames() {
        let l = make_labels(&track(vec![DrumEvent::new(0.10, KD, 90), DrumEvent::new(0.11, KD, 90)]), 100, 7);
        assert_eq!(l.roll.onsets[[10, 0]], 1.0);
        assert_eq!(l.roll.onsets[[11, 0]], 1.0);
        assert_eq!(l.roll.onset_count(), 2);
    }

    #[test]
    fn velocity_normalisation() {
        let l = make_labels(&track(vec![DrumEvent::new(0.2, SD, 64)]), 100, 7);
        assert!((l.roll.velocities[[20, 1]] - 64.0 / 127.0).abs() < 1e-7);
        assert!((l.roll.velocities[[20, 1]] - 0.5039).abs() < 1e-4);
    }

    #[test]
    fn same_frame_collisions_keep_the_loudest() {
        let l = make_labels(&track(vec![DrumEvent::new(0.101, SD, 40), DrumEvent::new(0.099, SD, 100)]), 100, 7);
        assert_eq!(l.roll.onset_count(), 1);
        assert!((l.roll.velocities[[10, 1]] - 100.0 / 127.0).abs() < 1e-7);
    }

    #[test]
    fn late_events_are_clamped() {
        let l = make_labels(&track(vec![DrumEvent::new(0.5, KD, 100)]), 10, 7);
        assert_eq!(l.clamped, 1);
        assert_eq!(l.roll.onsets[[9, 0]], 1.0);
    }
}
