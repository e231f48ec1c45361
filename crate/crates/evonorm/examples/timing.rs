use evonorm::proxy::*;
use evonorm::zoo;
use std::time::Instant;

fn main() {
    let d = make_dataset(1, &DatasetConfig::default());
    let g = zoo::get("bn_relu").unwrap().graph;
    let spec = AnchorSpec::new(AnchorKind::AnchorR);
    let tc = TrainConfig { steps: 20, batch: 128, ..TrainConfig::default() };
    let t0 = Instant::now();
    let r = train_eval(&spec, &g, &d, &tc, 7).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("AnchorR desk 20 steps: {:.2}s total, {:.0} ms/step, acc {:.3}", dt, dt / 20.0 * 1000.0, r.accuracy);
    for kind in [AnchorKind::AnchorM, AnchorKind::AnchorE] {
        let spec = AnchorSpec::new(kind);
        let tc = TrainConfig { steps: 10, batch: 128, ..TrainConfig::default() };
        let t0 = Instant::now();
        let _ = train_eval(&spec, &g, &d, &tc, 7).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        println!("{:?} desk 10 steps: {:.0} ms/step", kind, dt / 10.0 * 1000.0);
    }
    // micro-ish sizing
    let dm = make_dataset(1, &DatasetConfig { image_size: 12, train: 512, val: 256, noise_sigma: 0.3 });
    let tc = TrainConfig { steps: 20, batch: 32, ..TrainConfig::default() };
    for kind in AnchorKind::all() {
        let spec = AnchorSpec::new(kind);
        let t0 = Instant::now();
        let _ = train_eval(&spec, &g, &dm, &tc, 7).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        println!("{:?} micro(12px,b32) 20 steps: {:.1} ms/step", kind, dt / 20.0 * 1000.0);
    }
}
