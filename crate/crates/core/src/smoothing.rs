//! EMA smoothing of detection streams.
//!
//! Detections in each frame are greedily associated with existing tracks by
//! IoU (same class only). A matched track blends every corner coordinate and
//! its score toward the detection with decay `a`; unmatched detections start
//! new tracks; tracks unseen for more than `max_age` frames are dropped.

use serde::{Deserialize, Serialize};

use crate::attention::ema_blend;
use crate::error::{invalid, Result};
use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_id: u64,
    pub class_id: u32,
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(frame_id: u64, class_id: u32, bbox: BBox, score: f64) -> Result<Self> {
        bbox.validate()?;
        if !(0.0..=1.0).contains(&score) {
            return Err(invalid(format!("score {score} outside [0, 1]")));
        }
        Ok(Self {
            frame_id,
            class_id,
            bbox,
            score,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: u64,
    pub class_id: u32,
    pub smoothed_bbox: BBox,
    pub smoothed_score: f64,
    pub last_frame: u64,
    /// Frames since the last match.
    pub age: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub decay: f64,
    pub iou_gate: f64,
    pub max_age: u64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            decay: 0.3,
            iou_gate: 0.3,
            max_age: 5,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(invalid(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        if !(self.iou_gate > 0.0 && self.iou_gate < 1.0) {
            return Err(invalid(format!("IoU gate must lie in (0, 1), got {}", self.iou_gate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Matching {
    /// `(track index, detection index)`
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Greedy same-class association in descending IoU order. Ties resolve to
/// the lower track index, then the lower detection index.
pub fn associate(tracks: &[Track], detections: &[Detection], iou_gate: f64) -> Result<Matching> {
    if !(iou_gate > 0.0 && iou_gate < 1.0) {
        return Err(invalid(format!("IoU gate must lie in (0, 1), got {iou_gate}")));
    }
    if let Some(first) = detections.first() {
        if detections.iter().any(|d| d.frame_id != first.frame_id) {
            return Err(invalid("detections passed to associate span several frames"));
        }
    }
    let mut candidates = Vec::new();
    for (ti, t) in tracks.iter().enumerate() {
        for (di, d) in detections.iter().enumerate() {
            if t.class_id != d.class_id {
                continue;
            }
            let o = iou(&t.smoothed_bbox, &d.bbox)?;
            if o >= iou_gate {
                candidates.push((o, ti, di));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut track_used = vec![false; tracks.len()];
    let mut det_used = vec![false; detections.len()];
    let mut pairs = Vec::new();
    for (_, ti, di) in candidates {
        if !track_used[ti] && !det_used[di] {
            track_used[ti] = true;
            det_used[di] = true;
            pairs.push((ti, di));
        }
    }
    Ok(Matching {
        pairs,
        unmatched_tracks: (0..tracks.len()).filter(|&i| !track_used[i]).collect(),
        unmatched_detections: (0..detections.len()).filter(|&i| !det_used[i]).collect(),
    })
}

fn blend_box(prev: &BBox, cur: &BBox, decay: f64) -> BBox {
    BBox::new_unchecked(
        ema_blend(prev.x1, cur.x1, decay),
        ema_blend(prev.y1, cur.y1, decay),
        ema_blend(prev.x2, cur.x2, decay),
        ema_blend(prev.y2, cur.y2, decay),
    )
}

/// Smoothed output for one input detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedDetection {
    pub track_id: u64,
    pub frame_id: u64,
    pub class_id: u32,
    pub bbox: BBox,
    pub score: f64,
}

/// Stateful smoother for a single stream.
#[derive(Debug, Clone)]
pub struct Smoother {
    config: SmoothingConfig,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<u64>,
}

impl Smoother {
    pub fn new(config: SmoothingConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            tracks: Vec::new(),
            next_id: 0,
            last_frame: None,
        })
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Processes one frame. Output is aligned with `detections`.
    pub fn step(&mut self, frame_id: u64, detections: &[Detection]) -> Result<Vec<SmoothedDetection>> {
        if let Some(prev) = self.last_frame {
            if frame_id <= prev {
                return Err(invalid(format!("frame {frame_id} arrives after frame {prev}")));
            }
        }
        if let Some(d) = detections.iter().find(|d| d.frame_id != frame_id) {
            return Err(invalid(format!(
                "detection for frame {} passed with frame {frame_id}",
                d.frame_id
            )));
        }
        self.last_frame = Some(frame_id);

        let m = associate(&self.tracks, detections, self.config.iou_gate)?;
        let decay = self.config.decay;
        let mut out: Vec<Option<SmoothedDetection>> = vec![None; detections.len()];

        for &(ti, di) in &m.pairs {
            let t = &mut self.tracks[ti];
            let d = &detections[di];
            t.smoothed_bbox = blend_box(&t.smoothed_bbox, &d.bbox, decay);
            t.smoothed_score = ema_blend(t.smoothed_score, d.score, decay);
            t.last_frame = frame_id;
            t.age = 0;
            out[di] = Some(SmoothedDetection {
                track_id: t.track_id,
                frame_id,
                class_id: t.class_id,
                bbox: t.smoothed_bbox,
                score: t.smoothed_score,
            });
        }

        for &ti in &m.unmatched_tracks {
            let t = &mut self.tracks[ti];
            t.age = frame_id - t.last_frame;
        }
        let max_age = self.config.max_age;
        self.tracks.retain(|t| t.age <= max_age);

        for &di in &m.unmatched_detections {
            let d = &detections[di];
            let t = Track {
                track_id: self.next_id,
                class_id: d.class_id,
                smoothed_bbox: d.bbox,
                smoothed_score: d.score,
                last_frame: frame_id,
                age: 0,
            };
            self.next_id += 1;
            out[di] = Some(SmoothedDetection {
                track_id: t.track_id,
                frame_id,
                class_id: t.class_id,
                bbox: t.smoothed_bbox,
                score: t.smoothed_score,
            });
            self.tracks.push(t);
        }

        Ok(out
            .into_iter()
            .map(|o| o.expect("every detection is matched or spawned"))
            .collect())
    }
}

/// Convenience wrapper around [`Smoother::step`] with caller-owned tracks.
pub fn smooth_step(
    tracks: Vec<Track>,
    frame_id: u64,
    detections: &[Detection],
    config: SmoothingConfig,
    next_track_id: u64,
) -> Result<(Vec<Track>, Vec<SmoothedDetection>, u64)> {
    let last_frame = tracks.iter().map(|t| t.last_frame).max();
    let mut s = Smoother {
        config,
        tracks,
        next_id: next_track_id,
        last_frame: last_frame.filter(|&f| f < frame_id),
    };
    config.validate()?;
    let out = s.step(frame_id, detections)?;
    Ok((s.tracks, out, s.next_id))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_id: u64,
    pub detections: Vec<Detection>,
}

/// Folds the smoother over strictly increasing frames.
pub fn smooth_stream(frames: &[Frame], config: SmoothingConfig) -> Result<Vec<Vec<SmoothedDetection>>> {
    let mut s = Smoother::new(config)?;
    frames.iter().map(|f| s.step(f.frame_id, &f.detections)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(frame: u64, class: u32, b: [f64; 4], score: f64) -> Detection {
        Detection::new(frame, class, BBox::from_array(b).unwrap(), score).unwrap()
    }

    fn track(id: u64, class: u32, b: [f64; 4]) -> Track {
        Track {
            track_id: id,
            class_id: class,
            smoothed_bbox: BBox::from_array(b).unwrap(),
            smoothed_score: 1.0,
            last_frame: 0,
            age: 0,
        }
    }

    #[test]
    fn associate_empty_tracks() {
        let d = [det(1, 0, [0., 0., 1., 1.], 0.9), det(1, 1, [2., 2., 3., 3.], 0.5)];
        let m = associate(&[], &d, 0.3).unwrap();
        assert!(m.pairs.is_empty());
        assert_eq!(m.unmatched_detections, vec![0, 1]);
    }

    #[test]
    fn associate_single_candidate() {
        // IoU 0.8: [0,0,10,10] vs [0,0,10,8]
        let t = [track(0, 2, [0., 0., 10., 10.])];
        let d = [det(1, 2, [0., 0., 10., 8.], 0.9)];
        let m = associate(&t, &d, 0.3).unwrap();
        assert_eq!(m.pairs, vec![(0, 0)]);
        let other_class = [det(1, 3, [0., 0., 10., 8.], 0.9)];
        assert!(associate(&t, &other_class, 0.3).unwrap().pairs.is_empty());
    }

    #[test]
    fn associate_greedy_order() {
        // IoU([0,0,10,10], [0,0,10,h]) = h/10 for h <= 10
        let t = [track(0, 0, [0., 0., 10., 10.]), track(1, 0, [0., 0., 10., 10.])];
        let d = [det(1, 0, [0., 0., 10., 9.], 0.9), det(1, 0, [0., 0., 10., 8.], 0.9)];
        let m = associate(&t, &d, 0.3).unwrap();
        assert_eq!(m.pairs.len(), 2);
        assert_eq!(m.pairs[0], (0, 0));
        assert_eq!(m.pairs[1], (1, 1));
    }

    #[test]
    fn associate_rejects_mixed_frames() {
        let d = [det(1, 0, [0., 0., 1., 1.], 0.9), det(2, 0, [0., 0., 1., 1.], 0.9)];
        assert!(associate(&[], &d, 0.3).is_err());
    }

    #[test]
    fn step_hand_example() {
        let mut t = track(0, 0, [0., 0., 2., 2.]);
        t.smoothed_score = 1.0;
        let cfg = SmoothingConfig {
            decay: 0.5,
            ..Default::default()
        };
        let (tracks, out, next) = smooth_step(vec![t], 1, &[det(1, 0, [0., 0., 4., 2.], 0.5)], cfg, 1).unwrap();
        assert_eq!(next, 1);
        assert_eq!(out[0].bbox.to_array(), [0., 0., 3., 2.]);
        assert_eq!(out[0].score, 0.75);
        assert_eq!(tracks[0].smoothed_bbox.to_array(), [0., 0., 3., 2.]);
    }

    #[test]
    fn decay_one_tracks_detections_exactly() {
        let cfg = SmoothingConfig {
            decay: 1.0,
            ..Default::default()
        };
        let frames: Vec<Frame> = (0..10)
            .map(|f| Frame {
                frame_id: f,
                detections: vec![det(
                    f,
                    0,
                    [f as f64 * 0.1, 0., 5. + f as f64 * 0.3, 5.],
                    0.9 - f as f64 * 0.05,
                )],
            })
            .collect();
        let out = smooth_stream(&frames, cfg).unwrap();
        for (f, o) in frames.iter().zip(&out) {
            assert_eq!(o[0].bbox, f.detections[0].bbox);
            assert_eq!(o[0].score, f.detections[0].score);
            assert_eq!(o[0].track_id, 0);
        }
    }

    #[test]
    fn aging_drops_and_respawns() {
        let cfg = SmoothingConfig {
            max_age: 2,
            ..Default::default()
        };
        let b = [0., 0., 4., 4.];
        let frames = vec![
            Frame {
                frame_id: 0,
                detections: vec![det(0, 0, b, 0.9)],
            },
            Frame {
                frame_id: 1,
                detections: vec![],
            },
            Frame {
                frame_id: 2,
                detections: vec![],
            },
            Frame {
                frame_id: 3,
                detections: vec![],
            },
            Frame {
                frame_id: 4,
                detections: vec![det(4, 0, b, 0.9)],
            },
        ];
        let out = smooth_stream(&frames, cfg).unwrap();
        assert_eq!(out[0][0].track_id, 0);
        assert_eq!(out[4][0].track_id, 1);

        // gap of exactly max_age frames keeps the track
        let frames = vec![
            Frame {
                frame_id: 0,
                detections: vec![det(0, 0, b, 0.9)],
            },
            Frame {
                frame_id: 2,
                detections: vec![det(2, 0, b, 0.9)],
            },
        ];
        let out = smooth_stream(&frames, cfg).unwrap();
        assert_eq!(out[1][0].track_id, 0);
    }

    #[test]
    fn single_frame_passes_through() {
        let dets = vec![det(7, 0, [0., 0., 1., 1.], 0.4), det(7, 1, [3., 3., 5., 6.], 0.8)];
        let out = smooth_stream(
            &[Frame {
                frame_id: 7,
                detections: dets.clone(),
            }],
            SmoothingConfig::default(),
        )
        .unwrap();
        for (o, d) in out[0].iter().zip(&dets) {
            assert_eq!((o.bbox, o.score, o.class_id), (d.bbox, d.score, d.class_id));
        }
        assert_eq!(out[0][0].track_id, 0);
        assert_eq!(out[0][1].track_id, 1);
    }

    #[test]
    fn out_of_order_frames_rejected() {
        let frames = vec![
            Frame {
                frame_id: 3,
                detections: vec![],
            },
            Frame {
                frame_id: 2,
                detections: vec![],
            },
        ];
        assert!(smooth_stream(&frames, SmoothingConfig::default()).is_err());
        let mut s = Smoother::new(SmoothingConfig::default()).unwrap();
        assert!(s.step(1, &[det(2, 0, [0., 0., 1., 1.], 0.5)]).is_err());
    }

    #[test]
    fn config_validation() {
        for (decay, gate) in [(0.0, 0.3), (1.2, 0.3), (0.3, 0.0), (0.3, 1.0)] {
            let c = SmoothingConfig {
                decay,
                iou_gate: gate,
                max_age: 1,
            };
            assert!(Smoother::new(c).is_err());
        }
    }
}
