use evonorm::graph::GraphGenConfig;
use evonorm::presets::{micro, Mode};
use evonorm::proxy::*;
use evonorm::rejection::*;
use evonorm::zoo;
use rayon::prelude::*;
use std::time::Instant;

fn main() {
    let s = micro(Mode::Batch);
    let data = make_dataset(s.dataset_seed, &s.dataset);
    let qa = s.search.anchors[s.search.quality_anchor];
    let sa = s.search.anchors[s.search.stability_anchor];
    for name in ["bn_relu", "evonorm_b0", "evonorm_s1"] {
        let g = zoo::get(name).unwrap().graph;
        let out = quality_test(&g, &qa, &data, &s.search.quality, 7).unwrap();
        println!("{name}: micro quality acc {:.3} pass {}", out.accuracy, out.passed);
    }
    let graphs: Vec<_> = random_graph_stream(4242, &GraphGenConfig::default()).take(48).collect();
    let t0 = Instant::now();
    let pool = evonorm::parallel::pool(2);
    let verdicts: Vec<_> = pool.install(|| graphs.par_iter().map(|(seed, g)| {
        reject(g, &qa, &sa, &data, &s.search.quality, &s.search.stability, *seed).unwrap()
    }).collect());
    let passed = verdicts.iter().filter(|v| v.passed).count();
    let rej_q = verdicts.iter().filter(|v| !v.quality.passed).count();
    let mut accs: Vec<f64> = verdicts.iter().map(|v| v.quality.accuracy).collect();
    accs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    println!("micro randoms: passed {passed}/48, rej_q {rej_q}, wall {:.0}s", t0.elapsed().as_secs_f64());
    println!("top quality accs: {:?}", &accs[..12.min(accs.len())]);
}
