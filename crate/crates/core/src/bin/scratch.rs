// temporary diagnosis harness (not shipped)
use desens::annot::Category;
use desens::harness::{self, NoiseSpec, SceneSpec};
use desens::metrics::{self, RegionWeights};
use desens::pipeline::{self, PipelineConfig};

fn main() {
    let w = RegionWeights::default();
    let noise = NoiseSpec {
        drop_prob: 0.1,
        false_positive_rate: 0.05,
        ..NoiseSpec::default()
    };
    let mut gate_fail = 0usize;
    let mut merged = 0usize;
    let mut total_gt = 0usize;
    let mut per_cfg: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for i in 0..10u64 {
        let spec = SceneSpec { seed: 1 + i, ..SceneSpec::default() };
        let gt = harness::generate_gt(&spec).unwrap();
        let pred = harness::corrupt(&gt, &NoiseSpec { seed: 7 + i, ..noise });
        // count components per frame vs gt sensitive count (merge detection)
        for frame in &pred.frames {
            let comps = desens::geometry::connected_components(&frame.seg.face).len()
                + desens::geometry::connected_components(&frame.seg.plate).len();
            let masks = frame.objects.iter().filter(|o| o.mask.is_some()).count();
            if comps < masks {
                merged += 1;
            }
        }
        for (name, cfg) in harness::ablation_configs() {
            let run = pipeline::run_pipeline(&pred, &cfg).unwrap();
            let instances = pipeline::run_instances(&run);
            let gts: Vec<metrics::GtInstance> = metrics::gt_instances(&gt)
                .into_iter()
                .filter(|g| g.object.category.is_sensitive())
                .collect();
            let scores = metrics::mioff(&instances, &gts, &w).unwrap();
            let matched: Vec<f64> = scores.per_gt.iter().copied().filter(|&s| s > 0.0).collect();
            let match_rate = matched.len() as f64 / scores.per_gt.len() as f64;
            let matched_mean = matched.iter().sum::<f64>() / matched.len().max(1) as f64;
            per_cfg.entry(format!("{name}|rate")).or_default().push(match_rate);
            per_cfg.entry(format!("{name}|matched")).or_default().push(matched_mean);
            per_cfg.entry(name).or_default().push(scores.combined);
        }
        // DSJ rejection analysis on the DSJ config
        let cfg = PipelineConfig::with_stages(false, true, false);
        let run = pipeline::run_pipeline(&pred, &cfg).unwrap();
        for e in &run.audit {
            use desens::postproc::{RejectKind, RejectReason};
            if e.rejection.kind == RejectKind::Component
                && e.rejection.reason == RejectReason::LowIou
            {
                gate_fail += 1;
            }
        }
        total_gt += gt
            .frames
            .iter()
            .flat_map(|f| &f.objects)
            .filter(|o| o.category.is_sensitive())
            .count();
        let _ = Category::Face;
    }
    println!("gt sensitive instance-frames: {total_gt}");
    println!("frames with merged components: {merged}");
    println!("DSJ low-iou component rejections: {gate_fail}");
    for (name, v) in per_cfg {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        println!("{name:>10}: mean mioff {m:.4}");
    }
}
