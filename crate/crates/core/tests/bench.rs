use std::time::Instant;
use toon3d_core::gan::{train_base, TransferConfig};
use toon3d_core::tensor::Tensor;
use toon3d_core::world::{generate_sample, SamplingRanges, Style};

#[test]
#[ignore]
fn bench_training_throughput() {
    for res in [16usize, 32] {
        let ranges = SamplingRanges::default();
        let t0 = Instant::now();
        let images: Vec<Tensor> = (0..16)
            .map(|i| generate_sample(1, i, &ranges, Style::Plain, res).unwrap().image)
            .collect();
        let gen_time = t0.elapsed();
        let cfg = TransferConfig {
            steps: 10,
            batch_size: 8,
            ..Default::default()
        };
        let t1 = Instant::now();
        let _ = train_base(&images, res, &cfg, "bench").unwrap();
        let train_time = t1.elapsed();
        println!(
            "res {res}: world 16 samples {:.2}s, 10 gan steps {:.2}s ({:.0} ms/step)",
            gen_time.as_secs_f64(),
            train_time.as_secs_f64(),
            train_time.as_secs_f64() * 100.0
        );
    }
}

#[test]
#[ignore]
fn bench_recon_phases() {
    use toon3d_core::disc::{DiscConfig, Discriminator};
    use toon3d_core::embed::{EmbedConfig, EmbeddingNet};
    use toon3d_core::generator::{GenConfig, Generator};
    use toon3d_core::recon::*;
    use toon3d_core::vlda::*;
    let res = 32;
    let ranges = SamplingRanges::default();
    let sample = generate_sample(2, 0, &ranges, Style::Plain, res).unwrap();
    let gen = Generator::init(GenConfig::desk(res).unwrap(), 1, "b").unwrap();
    let disc = Discriminator::init(DiscConfig::desk(res).unwrap(), 2).unwrap();
    let mut f = EmbeddingNet::init(EmbedConfig::desk(res, 4).unwrap(), 3).unwrap();
    f.trained = true;
    let mut model = VldaModel::init(res, 4).unwrap();
    let cam = toon3d_core::camera::Camera::square(res);
    let prior = EllipsoidPrior::default_for(&cam);
    let t0 = Instant::now();
    let rep = pretrain_depth_prior(&mut model, &prior, std::slice::from_ref(&sample.image), &PretrainConfig::default()).unwrap();
    println!("prior pretrain: {:.2}s ({} steps, l1 {:.4})", t0.elapsed().as_secs_f64(), rep.steps_run, rep.final_l1);
    let cfg = PipelineConfig { cycles: 1, m: 8, step1_steps: 20, step3_steps: 20, e_steps: 20, ..Default::default() };
    let t1 = Instant::now();
    let (d0, a0, _) = step1_fit_albedo(&sample.image, &mut model, &f, &cfg).unwrap();
    println!("step1 20 iters: {:.2}s", t1.elapsed().as_secs_f64());
    let mut enc = InversionEncoder::init(res, 64, 5).unwrap();
    let mut r = toon3d_core::rng::rng_from_seed(6);
    let w = Tensor::randn(&[64], 1.0, &mut r);
    let t2 = Instant::now();
    let (gal, _) = step2_project(&d0, &a0, &w, &gen, &disc, &mut enc, &cfg, 0).unwrap();
    println!("step2 m=8 e_steps=20: {:.2}s", t2.elapsed().as_secs_f64());
    let t3 = Instant::now();
    let _ = step3_joint(&sample.image, &gal, &mut model, &f, &cfg).unwrap();
    println!("step3 20 iters: {:.2}s", t3.elapsed().as_secs_f64());
}
