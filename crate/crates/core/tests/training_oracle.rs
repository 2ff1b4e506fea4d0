use detkit_core::experiments::{gen_tasks, train_box, Regime, TrainConfig};
use detkit_core::geometry::{aiou_loss, BBox};
use detkit_core::LossVariant;

/// Plain descent written out longhand: returns the first step index at which
/// IoU reaches 0.9.
fn reference_descent(init: BBox, gt: BBox, lr: f64, max_steps: usize) -> Option<usize> {
    let mut c = [init.x1, init.y1, init.x2, init.y2];
    for step in 0..max_steps {
        let b = BBox::new_unchecked(c[0], c[1], c[2], c[3]);
        let r = aiou_loss(&b, &gt).unwrap();
        if r.iou >= 0.9 {
            return Some(step);
        }
        for (ck, gk) in c.iter_mut().zip(r.grad) {
            *ck -= lr * gk;
        }
        if c[2] < c[0] + 1e-6 {
            c[2] = c[0] + 1e-6;
        }
        if c[3] < c[1] + 1e-6 {
            c[3] = c[1] + 1e-6;
        }
    }
    None
}

#[test]
fn overlap_tasks_match_reference_loop() {
    let cfg = TrainConfig {
        variant: LossVariant::Aiou,
        learning_rate: 0.01,
        steps: 2000,
        ..Default::default()
    };
    for task in gen_tasks(20, 8, Regime::Overlap).unwrap() {
        let rec = train_box(&task, &cfg).unwrap();
        let want = reference_descent(task.init, task.gt, 0.01, 2000);
        assert!(want.is_some());
        assert_eq!(rec.steps_to_success, want);
    }
}

#[test]
fn gradient_is_the_loss_report_gradient() {
    let task = gen_tasks(1, 3, Regime::AspectSkew).unwrap()[0];
    let cfg = TrainConfig {
        steps: 1,
        ..Default::default()
    };
    let rec = train_box(&task, &cfg).unwrap();
    let r = aiou_loss(&task.init, &task.gt).unwrap();
    let mut expect = task.init.to_array();
    for (e, g) in expect.iter_mut().zip(r.grad) {
        *e -= 0.01 * g;
    }
    assert_eq!(rec.final_box.to_array(), expect);
}

#[test]
fn runs_are_bit_identical() {
    for regime in Regime::ALL {
        let tasks = gen_tasks(5, 21, regime).unwrap();
        for t in &tasks {
            let cfg = TrainConfig {
                variant: LossVariant::Ciou,
                steps: 500,
                ..Default::default()
            };
            assert_eq!(train_box(t, &cfg).unwrap(), train_box(t, &cfg).unwrap());
        }
    }
}
