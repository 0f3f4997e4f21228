//! Calibration probe for the reconstruction acceptance path (ignored by default).
use std::time::Instant;
use toon3d_core::camera::Camera;
use toon3d_core::disc::{DiscConfig, Discriminator};
use toon3d_core::embed::{train_identity_classifier, ClassifierTrainConfig, EmbedConfig};
use toon3d_core::gan::{train_base, TransferConfig};
use toon3d_core::metrics::depth_accuracy;
use toon3d_core::recon::*;
use toon3d_core::tensor::Tensor;
use toon3d_core::vlda::*;
use toon3d_core::world::{generate_sample, SamplingRanges, Style};

#[test]
#[ignore]
fn probe_depth_improvement() {
    let res = 16usize;
    let ranges = SamplingRanges::default();
    let t_all = Instant::now();

    // small plain corpus + quick generator
    let images: Vec<Tensor> = (0..48)
        .map(|i| generate_sample(11, i, &ranges, Style::Plain, res).unwrap().image)
        .collect();
    let t0 = Instant::now();
    let (gen, disc, _) = train_base(
        &images,
        res,
        &TransferConfig { steps: 600, batch_size: 8, seed: 3, ..Default::default() },
        "probe",
    )
    .unwrap();
    println!("gan 600 steps: {:.1}s", t0.elapsed().as_secs_f64());
    {
        // how face-like are generator samples? correlation against the corpus mean
        let mut mean_img = Tensor::zeros(&[3, res, res]);
        for img in &images {
            mean_img.add_in_place(img);
        }
        mean_img.scale_in_place(1.0 / images.len() as f64);
        let mut r = toon3d_core::rng::rng_from_seed(99);
        let mut corr_sum = 0.0;
        for _ in 0..16 {
            let z = Tensor::randn(&[64], 1.0, &mut r);
            let (g_img, _) = gen.generate_from_z(&z).unwrap();
            let (ma, mb) = (g_img.mean(), mean_img.mean());
            let mut num = 0.0;
            let mut da = 0.0;
            let mut db = 0.0;
            for (x, y) in g_img.data().iter().zip(mean_img.data()) {
                num += (x - ma) * (y - mb);
                da += (x - ma) * (x - ma);
                db += (y - mb) * (y - mb);
            }
            corr_sum += num / (da * db).sqrt().max(1e-12);
        }
        println!("gen-vs-corpus-mean correlation: {:.3}", corr_sum / 16.0);
    }

    // embedder for the perceptual term
    let labeled: Vec<(Tensor, usize)> = (0..48)
        .map(|i| {
            let s = generate_sample(12, i, &ranges, Style::Plain, res).unwrap();
            (s.image, s.spec.identity_id)
        })
        .collect();
    let (f, _) = train_identity_classifier(
        &labeled,
        EmbedConfig::desk(res, ranges.n_identities).unwrap(),
        &ClassifierTrainConfig { steps: 200, ..Default::default() },
    )
    .unwrap();

    // frontal test image with ground truth
    // frontal view AND canonical lighting, matching the phase-1 assumption
    let frontal = SamplingRanges {
        rot_max: [0.0; 3],
        trans_max: [0.0; 3],
        ambient: (0.5, 0.5),
        diffuse: (0.5, 0.5),
        light_xy: 0.0,
        ..ranges.clone()
    };
    let cam = Camera::square(res);
    let prior = EllipsoidPrior::default_for(&cam);
    let prior_depth = ellipsoid_depth(&prior, &cam).unwrap();

    for img_idx in 0..3usize {
        let sample = generate_sample(500, img_idx, &frontal, Style::Plain, res).unwrap();
        let base = depth_accuracy(&prior_depth, &sample.depth_gt, &sample.mask).unwrap();

        let mut model = VldaModel::init(res, 7 + img_idx as u64).unwrap();
        pretrain_depth_prior(
            &mut model,
            &prior,
            std::slice::from_ref(&sample.image),
            &PretrainConfig { tol: 0.005, ..Default::default() },
        )
        .unwrap();
        let after_prior = depth_accuracy(
            &model.predict_factors(&sample.image).unwrap().depth,
            &sample.depth_gt,
            &sample.mask,
        )
        .unwrap();

        let cfg = PipelineConfig {
            cycles: 4,
            m: 16,
            step1_steps: 80,
            step3_steps: 120,
            e_steps: 100,
            seed: 40 + img_idx as u64,
            ..Default::default()
        };
        let t1 = Instant::now();
        let result = reconstruct(
            ReconInput::Image(sample.image.clone()),
            &gen,
            &disc,
            &mut model,
            &f,
            &cfg,
            &InvertConfig { steps: 40, mean_samples: 500, ..Default::default() },
        )
        .unwrap();
        let secs = t1.elapsed().as_secs_f64();
        print!(
            "img {img_idx}: prior mae {:.5} (net {:.5})",
            base.scale_invariant_mae, after_prior.scale_invariant_mae
        );
        for (c, d) in result.depth_snapshots.iter().enumerate() {
            let m = depth_accuracy(d, &sample.depth_gt, &sample.mask).unwrap();
            print!(" | c{c} mae {:.5} r {:.3}", m.scale_invariant_mae, m.pearson);
        }
        println!("  ({secs:.0}s)");

    }
    println!("total {:.0}s", t_all.elapsed().as_secs_f64());
}
