use evonorm::presets::{micro, Mode};
use evonorm::proxy::*;
use evonorm::zoo;
use std::time::Instant;

fn main() {
    let s = micro(Mode::Batch);
    let data = make_dataset(s.dataset_seed, &s.dataset);
    for name in ["bn_relu", "evonorm_b0", "frn", "random_table3"] {
        let g = zoo::get(name).unwrap().graph;
        let t0 = Instant::now();
        let mut line = format!("{name}: ");
        for kind in AnchorKind::all() {
            let r = train_eval(&AnchorSpec::new(kind), &g, &data, &s.search.proxy, 7).unwrap();
            line += &format!("{}={:.3} ", kind.name(), r.accuracy);
        }
        println!("{line} ({:.0}s)", t0.elapsed().as_secs_f64());
    }
}
