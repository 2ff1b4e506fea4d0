//! Deterministic inputs shared by the criterion benches.

use detkit_core::eval::{GroundTruth, Prediction};
use detkit_core::{BBox, Tensor};

/// Small xorshift stream so bench inputs do not depend on an RNG crate.
struct Stream(u64);

impl Stream {
    fn unit(&mut self) -> f64 {
        self.0 ^= self.0 << 13;
        self.0 ^= self.0 >> 7;
        self.0 ^= self.0 << 17;
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    fn bbox(&mut self, extent: f64) -> BBox {
        let x = self.unit() * extent;
        let y = self.unit() * extent;
        let w = 1.0 + self.unit() * extent * 0.2;
        let h = 1.0 + self.unit() * extent * 0.2;
        BBox::new_unchecked(x, y, x + w, y + h)
    }
}

/// `n` overlapping (pred, gt) pairs.
pub fn box_pairs(n: usize) -> Vec<(BBox, BBox)> {
    let mut s = Stream(0x2545_F491_4F6C_DD1D);
    (0..n)
        .map(|_| {
            let gt = s.bbox(50.0);
            let dx = (s.unit() - 0.5) * gt.width() * 0.5;
            let dy = (s.unit() - 0.5) * gt.height() * 0.5;
            (gt.translate(dx, dy), gt)
        })
        .collect()
}

pub fn feature_map(c: usize, h: usize, w: usize) -> Tensor {
    let mut s = Stream(0x9E37_79B9_7F4A_7C15);
    Tensor::from_fn(vec![c, h, w], |_| 2.0 * s.unit() - 1.0).expect("non-empty shape")
}

/// Ground truth plus jittered, scored predictions over `images` images.
pub fn eval_set(images: usize, per_image: usize, classes: u32) -> (Vec<GroundTruth>, Vec<Prediction>) {
    let mut s = Stream(0xD1B5_4A32_D192_ED03);
    let mut gts = Vec::new();
    let mut preds = Vec::new();
    for img in 0..images {
        let image_id = format!("img{img}");
        for k in 0..per_image {
            let class_id = (k as u32) % classes;
            let bbox = s.bbox(200.0);
            gts.push(GroundTruth {
                image_id: image_id.clone(),
                class_id,
                bbox,
            });
            for _ in 0..2 {
                let dx = (s.unit() - 0.5) * bbox.width() * 0.4;
                preds.push(Prediction {
                    image_id: image_id.clone(),
                    class_id,
                    bbox: bbox.translate(dx, dx),
                    score: s.unit(),
                });
            }
        }
    }
    (gts, preds)
}
