use evonorm::evolution::{evolve, random_search, Status};
use evonorm::presets::{micro, Mode};
use evonorm::proxy::make_dataset;
use std::time::Instant;

fn main() {
    let mut s = micro(Mode::Batch);
    s.search.budget = 80;
    s.search.seed = 1;
    s.search.workers = 2;
    let data = make_dataset(s.dataset_seed, &s.dataset);
    let t0 = Instant::now();
    let log = evolve(&s.search, &data).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    let rejq = log.candidates.iter().filter(|c| c.status == Status::RejectedQuality).count();
    let rejs = log.candidates.iter().filter(|c| c.status == Status::RejectedStability).count();
    println!("evolve: {:.1}s, attempted {}, survivors {}, rej_q {}, rej_s {}", dt, log.attempted, log.survivors, rejq, rejs);
    let top: Vec<f64> = log.top_by_mean(10).iter().map(|c| c.mean_score()).collect();
    println!("top mean scores: {:?}", top);
    let t0 = Instant::now();
    let rs = random_search(&s.search, &data).unwrap();
    println!("random: {:.1}s, survivors {}", t0.elapsed().as_secs_f64(), rs.survivors);
    let rtop: Vec<f64> = rs.top_by_mean(10).iter().map(|c| c.mean_score()).collect();
    println!("rs top mean scores: {:?}", rtop);
}
